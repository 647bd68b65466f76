"""CRC-32C (Castagnoli, the x86 instruction's polynomial) and CRC-64/ECMA-182.

``zlib.crc32`` uses the IEEE polynomial, so both variants are implemented here
as plain table-driven CRCs.
"""

_CRC32C_POLY = 0x82F63B78  # reflected 0x1EDC6F41
_CRC64_POLY = 0x42F0E1EBA9EA3693
_M64 = (1 << 64) - 1


def _crc32c_table():
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ _CRC32C_POLY if c & 1 else c >> 1
        table.append(c)
    return table


def _crc64_table():
    table = []
    for i in range(256):
        c = i << 56
        for _ in range(8):
            c = ((c << 1) ^ _CRC64_POLY) & _M64 if c & (1 << 63) else (c << 1) & _M64
        table.append(c)
    return table


_T32 = _crc32c_table()
_T64 = _crc64_table()


def crc32c(data: bytes) -> int:
    crc = 0xFFFFFFFF
    for b in data:
        crc = _T32[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


def crc64_ecma(data: bytes) -> int:
    crc = 0
    for b in data:
        crc = _T64[((crc >> 56) ^ b) & 0xFF] ^ ((crc << 8) & _M64)
    return crc
