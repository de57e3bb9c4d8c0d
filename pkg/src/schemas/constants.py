# src/schemas/constants.py

PLY_PROPERTY_TYPES = {
    # ply type name -> little-endian numpy dtype
    "char": "<i1",
    "int8": "<i1",
    "uchar": "<u1",
    "uint8": "<u1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
}

# suffix -> cloud format understood by helpers.cloud_io
CLOUD_FORMAT_MAPPING = {
    ".xyz": "xyz",
    ".txt": "xyz",
    ".ply": "ply",
}
