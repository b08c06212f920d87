"""Writes the small NIfTI-1 fixtures used by tests/volume_io.rs.

Independent of the Rust reader: the header is packed field by field from the
published NIfTI-1 layout with the standard library only.
Run from this directory: python3 make_nifti.py
"""
import struct


def header(endian, dims, datatype, bitpix, pixdim, slope, inter):
    e = endian
    h = bytearray(348)
    struct.pack_into(e + "i", h, 0, 348)
    dim = [len(dims)] + list(dims) + [1] * (7 - len(dims))
    struct.pack_into(e + "8h", h, 40, *dim)
    struct.pack_into(e + "h", h, 70, datatype)
    struct.pack_into(e + "h", h, 72, bitpix)
    struct.pack_into(e + "8f", h, 76, 1.0, *pixdim, *([0.0] * (7 - len(pixdim))))
    struct.pack_into(e + "f", h, 108, 352.0)
    struct.pack_into(e + "f", h, 112, slope)
    struct.pack_into(e + "f", h, 116, inter)
    h[344:348] = b"n+1\0"
    return bytes(h) + b"\0\0\0\0"


def write(name, endian, dims, datatype, bitpix, code, pixdim, slope, inter, values):
    body = struct.pack(endian + code * len(values), *values)
    with open(name, "wb") as f:
        f.write(header(endian, dims, datatype, bitpix, pixdim, slope, inter) + body)


n = 5 * 4 * 3
write("int16_scaled.nii", "<", (5, 4, 3), 4, 16, "h", (1.5, 2.0, 2.5), 0.5, 2.0,
      [(i * 7) % 50 - 25 for i in range(n)])
n = 3 * 3 * 2
write("float32_be.nii", ">", (3, 3, 2), 16, 32, "f", (1.0, 1.0, 1.0), 0.0, 0.0,
      [i * 0.25 - 1.0 for i in range(n)])
n = 4 * 2 * 2
write("uint8_4d.nii", "<", (4, 2, 2, 1), 2, 8, "B", (0.5, 0.5, 0.5, 1.0), 0.0, 0.0,
      [(i * 13) % 256 for i in range(n)])
