# cython: boundscheck=False, wraparound=False
"""Compiled PoW hash kernel (OpenSSL sha256). Bit-identical to _powcore_py."""

from libc.string cimport memcpy
from cpython.bytes cimport PyBytes_FromStringAndSize

cdef extern from "openssl/evp.h":
    ctypedef struct EVP_MD:
        pass
    ctypedef struct EVP_MD_CTX:
        pass
    const EVP_MD *EVP_sha256()
    EVP_MD_CTX *EVP_MD_CTX_new()
    void EVP_MD_CTX_free(EVP_MD_CTX *ctx)
    int EVP_DigestInit_ex(EVP_MD_CTX *ctx, const EVP_MD *type, void *impl)
    int EVP_DigestUpdate(EVP_MD_CTX *ctx, const void *d, size_t cnt)
    int EVP_DigestFinal_ex(EVP_MD_CTX *ctx, unsigned char *md, unsigned int *s)

BACKEND = "compiled"

DEF PREIMAGE_LEN = 80


cdef inline void _pack_be64(unsigned char *buf, unsigned long long value) noexcept:
    cdef int i
    for i in range(8):
        buf[7 - i] = <unsigned char>(value >> (8 * i))


cdef inline int _leading_zero_ok(const unsigned char *digest, int bits) noexcept:
    # True iff the first `bits` bits of digest are zero.
    cdef int full = bits >> 3
    cdef int rem = bits & 7
    cdef int i
    for i in range(full):
        if digest[i] != 0:
            return 0
    if rem and (digest[full] >> (8 - rem)) != 0:
        return 0
    return 1


def header_digest(height, prev_digest, payload_digest, nonce):
    cdef unsigned char preimage[PREIMAGE_LEN]
    cdef unsigned char out[32]
    cdef unsigned int outlen = 0
    cdef const unsigned char *prev = prev_digest
    cdef const unsigned char *payload = payload_digest
    if len(prev_digest) != 32 or len(payload_digest) != 32:
        raise ValueError("digests must be 32 bytes")
    _pack_be64(preimage, <unsigned long long>height)
    memcpy(preimage + 8, prev, 32)
    memcpy(preimage + 40, payload, 32)
    _pack_be64(preimage + 72, <unsigned long long>nonce)
    cdef EVP_MD_CTX *ctx = EVP_MD_CTX_new()
    try:
        EVP_DigestInit_ex(ctx, EVP_sha256(), NULL)
        EVP_DigestUpdate(ctx, preimage, PREIMAGE_LEN)
        EVP_DigestFinal_ex(ctx, out, &outlen)
    finally:
        EVP_MD_CTX_free(ctx)
    return PyBytes_FromStringAndSize(<char *>out, 32)


def meets_target(digest, difficulty_bits):
    cdef const unsigned char *d = digest
    if len(digest) != 32:
        raise ValueError("digest must be 32 bytes")
    if difficulty_bits <= 0:
        return True
    return bool(_leading_zero_ok(d, <int>difficulty_bits))


def mine_nonce(height, prev_digest, payload_digest, difficulty_bits):
    """Smallest nonce whose header digest clears the difficulty target."""
    cdef unsigned char preimage[PREIMAGE_LEN]
    cdef unsigned char out[32]
    cdef unsigned int outlen = 0
    cdef const unsigned char *prev = prev_digest
    cdef const unsigned char *payload = payload_digest
    cdef unsigned long long nonce = 0
    cdef int bits = <int>difficulty_bits
    if len(prev_digest) != 32 or len(payload_digest) != 32:
        raise ValueError("digests must be 32 bytes")
    _pack_be64(preimage, <unsigned long long>height)
    memcpy(preimage + 8, prev, 32)
    memcpy(preimage + 40, payload, 32)
    cdef EVP_MD_CTX *ctx = EVP_MD_CTX_new()
    try:
        while True:
            _pack_be64(preimage + 72, nonce)
            EVP_DigestInit_ex(ctx, EVP_sha256(), NULL)
            EVP_DigestUpdate(ctx, preimage, PREIMAGE_LEN)
            EVP_DigestFinal_ex(ctx, out, &outlen)
            if bits <= 0 or _leading_zero_ok(out, bits):
                return nonce, PyBytes_FromStringAndSize(<char *>out, 32)
            nonce += 1
    finally:
        EVP_MD_CTX_free(ctx)
