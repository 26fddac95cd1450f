#!/usr/bin/env python3
"""Regenerates the v1-signed fixture APKs used by the certificate tests.

Uses Python's zipfile and the `cryptography` package, independently of the
Rust reader. Every fixture is judged at the reference time 2018-01-01T00:00:00Z.

    python3 generate.py            # writes *.apk next to this script
"""
import base64
import datetime as dt
import hashlib
import io
import os
import zipfile

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.hazmat.primitives.serialization import pkcs7
from cryptography.x509.oid import NameOID

HERE = os.path.dirname(os.path.abspath(__file__))

PAYLOAD = {
    "AndroidManifest.xml": b"<manifest package=\"com.example.fixture\"/>\n",
    "classes.dex": b"dex\n035\x00" + bytes(range(64)),
    "res/raw/notes.txt": b"fixture resource\n" * 8,
}


def b64_sha256(data):
    return base64.b64encode(hashlib.sha256(data).digest()).decode()


def manifest_mf(entries):
    out = "Manifest-Version: 1.0\r\nCreated-By: fixture-generator\r\n\r\n"
    sections = []
    for name, data in entries.items():
        section = f"Name: {name}\r\nSHA-256-Digest: {b64_sha256(data)}\r\n\r\n"
        sections.append(section)
        out += section
    return out.encode(), sections


def signature_file(mf, sections):
    out = (
        "Signature-Version: 1.0\r\n"
        "Created-By: fixture-generator\r\n"
        f"SHA-256-Digest-Manifest: {b64_sha256(mf)}\r\n\r\n"
    )
    for section in sections:
        name = section.split("\r\n", 1)[0][len("Name: "):]
        out += f"Name: {name}\r\nSHA-256-Digest: {b64_sha256(section.encode())}\r\n\r\n"
    return out.encode()


def make_cert(key, not_before, not_after, cn):
    name = x509.Name([
        x509.NameAttribute(NameOID.COMMON_NAME, cn),
        x509.NameAttribute(NameOID.ORGANIZATION_NAME, "Fixture Org"),
    ])
    return (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(0x1234)
        .not_valid_before(not_before)
        .not_valid_after(not_after)
        .sign(key, hashes.SHA256())
    )


def signed_apk(key, cert, tamper=False, garbage_block=False):
    mf, sections = manifest_mf(PAYLOAD)
    sf = signature_file(mf, sections)
    if garbage_block:
        block = os.urandom(300)
    else:
        block = (
            pkcs7.PKCS7SignatureBuilder()
            .set_data(sf)
            .add_signer(cert, key, hashes.SHA256())
            .sign(serialization.Encoding.DER, [pkcs7.PKCS7Options.DetachedSignature])
        )
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr("META-INF/MANIFEST.MF", mf, zipfile.ZIP_DEFLATED)
        zf.writestr("META-INF/CERT.SF", sf, zipfile.ZIP_DEFLATED)
        zf.writestr("META-INF/CERT.RSA", block, zipfile.ZIP_STORED)
        for name, data in PAYLOAD.items():
            if tamper and name == "classes.dex":
                data = bytearray(data)
                data[20] ^= 0xFF
                data = bytes(data)
            zf.writestr(name, data, zipfile.ZIP_DEFLATED)
    return buf.getvalue()


def unsigned_apk():
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, data in PAYLOAD.items():
            zf.writestr(name, data, zipfile.ZIP_DEFLATED)
    return buf.getvalue()


def utc(y, m, d):
    return dt.datetime(y, m, d, tzinfo=dt.timezone.utc)


def main():
    key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    valid = make_cert(key, utc(2015, 1, 1), utc(2035, 1, 1), "Fixture Valid")
    expired = make_cert(key, utc(2010, 1, 1), utc(2012, 1, 1), "Fixture Expired")
    future = make_cert(key, utc(2030, 1, 1), utc(2040, 1, 1), "Fixture Future")
    fixtures = {
        "unsigned.apk": unsigned_apk(),
        "valid.apk": signed_apk(key, valid),
        "expired.apk": signed_apk(key, expired),
        "not_yet_valid.apk": signed_apk(key, future),
        "tampered.apk": signed_apk(key, valid, tamper=True),
        "garbage.apk": signed_apk(key, valid, garbage_block=True),
    }
    for name, data in fixtures.items():
        with open(os.path.join(HERE, name), "wb") as fh:
            fh.write(data)
    with open(os.path.join(HERE, "valid.pem"), "wb") as fh:
        fh.write(valid.public_bytes(serialization.Encoding.PEM))


if __name__ == "__main__":
    main()
