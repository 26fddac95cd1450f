//! Fixture builders for the droidae test suites.
//!
//! Everything here produces raw bytes through code paths that share nothing
//! with the readers in `droidae`: archives come from the `zip` crate, binary
//! manifests are compiled from text with `quick-xml`, and DEX files are laid
//! out by hand from a method list that doubles as the expected table dump.
//! The gradient oracle re-evaluates a dense network in double-double arithmetic.

pub mod axml;
pub mod dex;
pub mod gradcheck;
pub mod zipfix;

pub use axml::{compile_manifest, AxmlOptions};
pub use dex::DexBuilder;
pub use zipfix::{rename_entry, ZipBuilder};

/// Textual manifests used by the differential parser tests.
pub const MANIFEST_FIXTURES: &[(&str, &str)] = &[
    (
        "launcher",
        r#"<?xml version="1.0" encoding="utf-8"?>
<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="com.example.launcher" android:versionCode="3">
    <uses-permission android:name="android.permission.INTERNET"/>
    <application android:label="Launcher">
        <activity android:name=".Main" android:exported="true">
            <intent-filter>
                <action android:name="android.intent.action.MAIN"/>
                <category android:name="android.intent.category.LAUNCHER"/>
            </intent-filter>
        </activity>
    </application>
</manifest>"#,
    ),
    (
        "no-permissions",
        r#"<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="org.example.quiet">
    <application android:label="Quiet"/>
</manifest>"#,
    ),
    (
        "sms-dropper",
        r#"<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="ru.bad.sms">
    <uses-permission android:name="android.permission.SEND_SMS"/>
    <uses-permission android:name="android.permission.RECEIVE_SMS"/>
    <uses-permission android:name="android.permission.READ_SMS"/>
    <uses-permission android:name="android.permission.READ_PHONE_STATE"/>
    <uses-permission android:name="android.permission.RECEIVE_BOOT_COMPLETED"/>
    <uses-permission android:name="android.permission.SEND_SMS"/>
    <permission android:name="ru.bad.sms.PRIVATE" android:protectionLevel="signature"/>
    <application>
        <receiver android:name=".Boot">
            <intent-filter android:priority="1000">
                <action android:name="android.intent.action.BOOT_COMPLETED"/>
                <action android:name="android.provider.Telephony.SMS_RECEIVED"/>
            </intent-filter>
        </receiver>
        <service android:name=".Sender"/>
    </application>
</manifest>"#,
    ),
    (
        "browser",
        r#"<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="com.example.browser">
    <uses-sdk android:minSdkVersion="21" android:targetSdkVersion="28"/>
    <uses-permission android:name="android.permission.INTERNET"/>
    <uses-permission android:name="android.permission.ACCESS_NETWORK_STATE"/>
    <uses-permission android:name="  android.permission.CAMERA  "/>
    <application android:allowBackup="false">
        <activity android:name=".Browser">
            <intent-filter>
                <action android:name="android.intent.action.VIEW"/>
                <category android:name="android.intent.category.DEFAULT"/>
                <category android:name="android.intent.category.BROWSABLE"/>
                <data android:scheme="https"/>
            </intent-filter>
            <intent-filter>
                <action android:name="android.intent.action.MAIN"/>
                <category android:name="android.intent.category.LAUNCHER"/>
            </intent-filter>
        </activity>
    </application>
</manifest>"#,
    ),
    (
        "admin-unicode",
        r#"<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="com.exämple.ünïcode">
    <uses-permission android:name="android.permission.BIND_DEVICE_ADMIN"/>
    <uses-permission android:name="android.permission.SYSTEM_ALERT_WINDOW"/>
    <uses-permission android:name=""/>
    <application android:label="Ünïcode ☃">
        <receiver android:name=".Admin" android:permission="android.permission.BIND_DEVICE_ADMIN">
            <intent-filter>
                <action android:name="android.app.action.DEVICE_ADMIN_ENABLED"/>
                <action android:name="android.intent.action.USER_PRESENT"/>
            </intent-filter>
        </receiver>
    </application>
</manifest>"#,
    ),
    (
        "package-changes",
        r#"<manifest xmlns:android="http://schemas.android.com/apk/res/android" package="net.example.watch">
    <uses-permission android:name="android.permission.INSTALL_PACKAGES"/>
    <uses-permission android:name="android.permission.GET_TASKS"/>
    <application>
        <receiver android:name=".Watch">
            <intent-filter>
                <action android:name="android.intent.action.PACKAGE_ADDED"/>
                <action android:name="android.intent.action.PACKAGE_REMOVED"/>
                <category android:name="android.intent.category.HOME"/>
                <data android:scheme="package"/>
            </intent-filter>
        </receiver>
    </application>
</manifest>"#,
    ),
];
