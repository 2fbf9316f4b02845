"""Writes a tiny PNG dataset and its expected content fingerprint.

Independent of the Rust code: PNG encoding via zlib/struct, hashing via
hashlib. Run from this directory: python3 make_golden.py
"""
import hashlib
import struct
import zlib

# (identity, instance, width, height, 8-bit gray pixels)
POINTS = [
    ("alice", "01", 2, 1, [0, 255]),
    ("bob", "x7", 2, 1, [128, 64]),
]


def png_gray8(width, height, pixels):
    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    raw = b"".join(b"\x00" + bytes(pixels[y * width:(y + 1) * width]) for y in range(height))
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 0, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b"")


def fingerprint(points):
    h = hashlib.sha256()
    h.update(b"ANONBENCH-DATASET-V1")
    h.update(struct.pack("<Q", len(points)))
    for identity, instance, w, hgt, px in sorted(points, key=lambda p: (p[0], p[1])):
        for label in (identity, instance):
            h.update(struct.pack("<I", len(label)) + label.encode())
        h.update(struct.pack("<III", w, hgt, 1))
        # An 8-bit level b maps to the 16-bit level b * 257.
        h.update(b"".join(struct.pack("<H", b * 257) for b in px))
    return h.hexdigest()


if __name__ == "__main__":
    for identity, instance, w, hgt, px in POINTS:
        with open(f"golden/{identity}_{instance}.png", "wb") as f:
            f.write(png_gray8(w, hgt, px))
    with open("golden_fingerprint.txt", "w") as f:
        f.write(fingerprint(POINTS) + "\n")
