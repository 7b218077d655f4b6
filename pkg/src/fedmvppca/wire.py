"""Self-describing binary format for parameter messages and checkpoints.

Layout: magic ``FMVP``, version byte, kind byte (local/global), 64-bit layout
digest, view count, then one block per view (length-prefixed name, d_k, q,
float64 little-endian payload), and a trailing 64-bit checksum over all
preceding bytes.  Round-trips are bit-exact for every finite value.
"""

import hashlib
import struct

import numpy as np

from .errors import ChecksumFailure, FormatVersionMismatch, TruncatedMessage
from .model import GlobalParams, LocalParams, ViewPrior

MAGIC = b"FMVP"
VERSION = 1
KIND_LOCAL = 0
KIND_GLOBAL = 1


def _digest64(data):
    return hashlib.blake2b(data, digest_size=8).digest()


def layout_digest(params):
    """64-bit digest of the message's view schema (names, dims, latent dim)."""
    if isinstance(params, GlobalParams):
        dims = {k: vp.mu_tilde.shape[0] for k, vp in params.views.items()}
    else:
        dims = {k: params.mu[k].shape[0] for k in params.views}
    text = ";".join(f"{k}:{dims[k]}:{params.latent_dim}" for k in dims)
    return _digest64(text.encode())


def _floats(*values):
    return struct.pack(f"<{len(values)}d", *values)


def _array(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def serialize_params(params):
    """Encode LocalParams or GlobalParams into the wire format."""
    is_global = isinstance(params, GlobalParams)
    kind = KIND_GLOBAL if is_global else KIND_LOCAL
    names = params.view_names if is_global else params.views
    out = bytearray()
    out += MAGIC
    out += struct.pack("<BB", VERSION, kind)
    out += layout_digest(params)
    out += struct.pack("<H", len(names))
    q = params.latent_dim
    for k in names:
        name = k.encode()
        if is_global:
            vp = params.views[k]
            d_k = vp.mu_tilde.shape[0]
            payload = (_array(vp.mu_tilde) + _floats(vp.sigma2_mu_tilde)
                       + _array(vp.w_tilde)
                       + _floats(vp.sigma2_w_tilde, vp.alpha, vp.beta))
        else:
            d_k = params.mu[k].shape[0]
            payload = (_array(params.mu[k]) + _array(params.w[k])
                       + _floats(params.sigma2[k]))
        out += struct.pack("<H", len(name)) + name
        out += struct.pack("<II", d_k, q)
        out += payload
    out += _digest64(bytes(out))
    return bytes(out)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise TruncatedMessage(f"message ends inside {what}",
                                   at=self.pos, need=n)
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what):
        return self.take(1, what)[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, what):
        return struct.unpack("<d", self.take(8, what))[0]

    def f64_array(self, count, shape, what):
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(float).reshape(shape)


def deserialize_params(blob):
    """Decode a wire-format message back into its parameter object."""
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatVersionMismatch("bad magic", got=magic)
    version = r.u8("version")
    if version != VERSION:
        raise FormatVersionMismatch("unsupported version", got=version)
    kind = r.u8("kind")
    if kind not in (KIND_LOCAL, KIND_GLOBAL):
        raise FormatVersionMismatch("unknown message kind", got=kind)
    digest = r.take(8, "layout digest")
    n_views = r.u16("view count")
    latent_dim = None
    mu, w, sigma2, priors = {}, {}, {}, {}
    for _ in range(n_views):
        name_len = r.u16("view name length")
        name = r.take(name_len, "view name").decode()
        d_k = r.u32("view dimension")
        q = r.u32("latent dimension")
        if latent_dim is None:
            latent_dim = q
        elif q != latent_dim:
            raise FormatVersionMismatch("inconsistent latent dimension",
                                        view=name)
        if kind == KIND_GLOBAL:
            priors[name] = ViewPrior(
                mu_tilde=r.f64_array(d_k, (d_k,), "mu_tilde"),
                sigma2_mu_tilde=r.f64("sigma2_mu_tilde"),
                w_tilde=r.f64_array(d_k * q, (d_k, q), "w_tilde"),
                sigma2_w_tilde=r.f64("sigma2_w_tilde"),
                alpha=r.f64("alpha"),
                beta=r.f64("beta"),
            )
        else:
            mu[name] = r.f64_array(d_k, (d_k,), "mu")
            w[name] = r.f64_array(d_k * q, (d_k, q), "w")
            sigma2[name] = r.f64("sigma2")
    body_end = r.pos
    checksum = r.take(8, "checksum")
    if r.pos != len(blob):
        raise FormatVersionMismatch("trailing bytes after checksum",
                                    extra=len(blob) - r.pos)
    if checksum != _digest64(blob[:body_end]):
        raise ChecksumFailure("payload checksum does not match")
    if kind == KIND_GLOBAL:
        params = GlobalParams(latent_dim=latent_dim or 0, views=priors)
    else:
        params = LocalParams(latent_dim=latent_dim or 0, mu=mu, w=w,
                             sigma2=sigma2)
    if digest != layout_digest(params):
        raise ChecksumFailure("layout digest does not match message views")
    return params
