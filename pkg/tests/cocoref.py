"""Reference RLE codec for cross-validation, transliterated from the de facto
COCO C implementation (maskApi.c). Kept deliberately literal -- index loops
and bit twiddling -- so it shares no code or structure with the package's
vectorized codec. Used as the independent oracle in tests only.
"""


def ref_encode(mask_fortran_flat, h, w):
    """RLE counts of a column-major flattened 0/1 list (rleEncode)."""
    counts = []
    p = 0
    c = 0
    for j in range(h * w):
        if mask_fortran_flat[j] != p:
            counts.append(c)
            c = 0
            p = mask_fortran_flat[j]
        c += 1
    counts.append(c)
    if mask_fortran_flat and mask_fortran_flat[0] == 1:
        counts.insert(0, 0)
    return counts


def ref_decode(counts, h, w):
    """Column-major flattened 0/1 list from RLE counts (rleDecode)."""
    out = []
    v = 0
    for c in counts:
        out.extend([v] * c)
        v = 1 - v
    assert len(out) == h * w, "counts do not cover the mask"
    return out


def ref_to_string(counts):
    """rleToString: LEB128-like, 6 bits per char, ascii 48..111."""
    s = []
    cnts = list(counts)
    for i in range(len(cnts)):
        x = int(cnts[i])
        if i > 2:
            x -= int(cnts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            if c & 0x10:
                more = x != -1
            else:
                more = x != 0
            if more:
                c |= 0x20
            c += 48
            s.append(chr(c))
    return "".join(s)


def ref_from_string(s):
    """rleFrString: inverse of ref_to_string."""
    cnts = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(cnts) > 2:
            x += cnts[len(cnts) - 2]
        cnts.append(x)
    return cnts
