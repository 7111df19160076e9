"""Device-under-test abstraction: surrogate nonlinear PA with memory, a
binary wire protocol, and a client/server pair for remote measurement.

The surrogate is a circular FIR prefilter followed by a forward GMP
model, with optional complex Gaussian output noise.  The wire frame is

    magic "ILCP" | version u8 (=1) | command u8 | count u32 LE | payload

where APPLY payloads are `count` pairs of little-endian float64
(real, imaginary) and ERROR payloads are a 4-byte ASCII code.
"""
from __future__ import annotations

import configparser
import itertools
import socket
import socketserver
import struct
import threading
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Protocol

import numpy as np

from .errors import (
    ConnectionFailedError,
    PlantError,
    ProtocolError,
    RejectedInputError,
)
from .gmp import GmpModel, GmpOrders, apply_gmp
from .signal_core import Signal
from .siggen import rng_for


class PlantInterface(Protocol):
    def apply(self, u: Signal) -> Signal: ...


@dataclass
class SurrogatePa:
    """Behavioral PA stand-in: circular FIR prefilter -> GMP -> noise.

    Immutable apart from an internal draw counter that advances the
    noise stream on every apply, so repeated measurements of the same
    input see independent noise realizations.
    """

    forward_gmp: GmpModel
    prefilter: np.ndarray  # complex FIR taps, applied circularly
    noise_std: float = 0.0
    noise_seed: int = 0
    saturation_limit: float | None = None
    preset_id: str = "custom"
    _draws: itertools.count = field(default_factory=itertools.count, repr=False, compare=False)

    def __post_init__(self):
        taps = np.atleast_1d(np.asarray(self.prefilter, dtype=np.complex128))
        if not np.all(np.isfinite(taps)) or taps.size == 0:
            raise RejectedInputError("prefilter taps must be finite and nonempty")
        if self.noise_std < 0:
            raise RejectedInputError("noise_std must be nonnegative")
        if self.saturation_limit is not None and not self.saturation_limit > 0:
            raise RejectedInputError("saturation_limit must be positive")
        self.prefilter = taps

    def apply(self, u: Signal) -> Signal:
        return surrogate_apply(self, u)

    def without_noise(self) -> "SurrogatePa":
        return replace(self, noise_std=0.0, _draws=itertools.count())


def _circular_fir(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for d, tap in enumerate(taps):
        out += tap * np.roll(x, d)
    return out


def surrogate_apply_info(pa: SurrogatePa, u: Signal, noise_index: int | None = None):
    """Returns (output Signal, clipped flag)."""
    x = u.samples
    clipped = False
    if pa.saturation_limit is not None:
        mag = np.abs(x)
        over = mag > pa.saturation_limit
        if np.any(over):
            clipped = True
            x = np.where(over, x * (pa.saturation_limit / np.where(over, mag, 1.0)), x)
            warnings.warn("surrogate input clipped at the saturation limit")
    y = apply_gmp(pa.forward_gmp, _circular_fir(x, pa.prefilter))
    if pa.noise_std > 0.0:
        idx = next(pa._draws) if noise_index is None else noise_index
        gen = rng_for(pa.noise_seed, 3, idx)
        y = y + (pa.noise_std / np.sqrt(2.0)) * (
            gen.standard_normal(y.size) + 1j * gen.standard_normal(y.size)
        )
    if not np.all(np.isfinite(y)):
        raise PlantError("plant diverged: non-finite output")
    return Signal(y, u.sample_rate_hz, u.carrier_hz), clipped


def surrogate_apply(pa: SurrogatePa, u: Signal, noise_index: int | None = None) -> Signal:
    return surrogate_apply_info(pa, u, noise_index)[0]


# ---------------------------------------------------------------------------
# Wire protocol
# ---------------------------------------------------------------------------

MAGIC = b"ILCP"
VERSION = 1
CMD_APPLY_REQUEST = 1
CMD_APPLY_RESPONSE = 2
CMD_ERROR = 255
HEADER = struct.Struct("<4sBBI")
DEFAULT_COUNT_CAP = 1 << 22

ERROR_CODES = {
    "bad-magic": b"MAGC",
    "bad-version": b"VERS",
    "bad-command": b"CMND",
    "oversized": b"SIZE",
    "truncated": b"TRNC",
    "non-finite": b"NFIN",
    "plant-error": b"PLNT",
}
ERROR_NAMES = {code: name for name, code in ERROR_CODES.items()}


def encode_apply(samples: np.ndarray, command: int = CMD_APPLY_REQUEST) -> bytes:
    data = np.ascontiguousarray(samples, dtype=np.complex128)
    payload = np.empty(2 * data.size, dtype="<f8")
    payload[0::2] = data.real
    payload[1::2] = data.imag
    return HEADER.pack(MAGIC, VERSION, command, data.size) + payload.tobytes()


def encode_error(name: str) -> bytes:
    return HEADER.pack(MAGIC, VERSION, CMD_ERROR, 0) + ERROR_CODES[name]


def decode_payload(raw: bytes, count: int) -> np.ndarray:
    flat = np.frombuffer(raw, dtype="<f8", count=2 * count)
    return flat[0::2] + 1j * flat[1::2]


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining > 0:
        chunk = sock.recv(min(remaining, 1 << 16))
        if not chunk:
            raise ConnectionError("peer closed connection")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class _PlantHandler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        server: PlantServer = self.server  # type: ignore[assignment]
        try:
            while True:
                try:
                    header = _recv_exact(sock, HEADER.size)
                except ConnectionError:
                    return
                magic, version, command, count = HEADER.unpack(header)
                if magic != MAGIC:
                    sock.sendall(encode_error("bad-magic"))
                    continue
                if version != VERSION:
                    sock.sendall(encode_error("bad-version"))
                    continue
                if command != CMD_APPLY_REQUEST:
                    sock.sendall(encode_error("bad-command"))
                    continue
                if count > server.count_cap:
                    sock.sendall(encode_error("oversized"))
                    continue
                try:
                    payload = _recv_exact(sock, 16 * count)
                except ConnectionError:
                    return
                samples = decode_payload(payload, count)
                if count == 0:
                    sock.sendall(encode_apply(samples, CMD_APPLY_RESPONSE))
                    continue
                if count < 2 or not np.all(np.isfinite(samples)):
                    sock.sendall(encode_error("non-finite"))
                    continue
                try:
                    out = server.pa.apply(Signal(samples, 1.0))
                except PlantError:
                    sock.sendall(encode_error("plant-error"))
                    continue
                sock.sendall(encode_apply(out.samples, CMD_APPLY_RESPONSE))
        except Exception:
            # A misbehaving client must never take the server down.
            return


class PlantServer(socketserver.ThreadingTCPServer):
    """Serves surrogate_apply over the wire protocol.

    Noise is disabled by default so local and remote measurements agree
    bit-exactly; pass keep_noise=True to serve the preset's noise.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, pa: SurrogatePa, host: str = "127.0.0.1", port: int = 0,
                 count_cap: int = DEFAULT_COUNT_CAP, keep_noise: bool = False):
        self.pa = pa if keep_noise else pa.without_noise()
        self.count_cap = count_cap
        super().__init__((host, port), _PlantHandler)

    @property
    def endpoint(self) -> tuple:
        return self.server_address[:2]

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def plant_serve(pa: SurrogatePa, host: str = "127.0.0.1", port: int = 0,
                count_cap: int = DEFAULT_COUNT_CAP, keep_noise: bool = False) -> PlantServer:
    return PlantServer(pa, host, port, count_cap=count_cap, keep_noise=keep_noise)


@dataclass
class RemotePlant:
    """PlantInterface over the wire protocol; one connection per request."""

    host: str
    port: int
    timeout_s: float = 30.0

    def apply(self, u: Signal) -> Signal:
        try:
            with socket.create_connection((self.host, self.port), timeout=self.timeout_s) as sock:
                sock.sendall(encode_apply(u.samples))
                header = _recv_exact(sock, HEADER.size)
                magic, version, command, count = HEADER.unpack(header)
                if magic != MAGIC or version != VERSION:
                    raise ProtocolError("malformed response header")
                if command == CMD_ERROR:
                    code = _recv_exact(sock, 4)
                    name = ERROR_NAMES.get(code, code.hex())
                    raise ProtocolError(f"remote plant error: {name}", code=name)
                if command != CMD_APPLY_RESPONSE:
                    raise ProtocolError(f"unexpected response command {command}")
                if count != u.samples.size:
                    raise ProtocolError(
                        f"response count {count} does not match request {u.samples.size}"
                    )
                payload = _recv_exact(sock, 16 * count)
        except socket.timeout as exc:
            raise ConnectionFailedError(f"remote plant timed out after {self.timeout_s} s") from exc
        except (ConnectionError, OSError) as exc:
            raise ConnectionFailedError(f"remote plant unreachable: {exc}") from exc
        return Signal(decode_payload(payload, count), u.sample_rate_hz, u.carrier_hz)


# ---------------------------------------------------------------------------
# Preset files
# ---------------------------------------------------------------------------

def _format_complex(c: complex) -> str:
    # repr of a complex round-trips through complex() exactly
    return repr(c)


def save_preset(path, pa: SurrogatePa) -> None:
    o = pa.forward_gmp.orders
    parser = configparser.ConfigParser()
    parser["preset"] = {"id": pa.preset_id, "format": "1"}
    parser["prefilter"] = {
        f"tap_{d}": _format_complex(complex(tap)) for d, tap in enumerate(pa.prefilter)
    }
    coeffs = {"n_m": str(o.n_m), "n_p": str(o.n_p), "n_g": str(o.n_g)}
    for (m, p, g), c in np.ndenumerate(pa.forward_gmp.alpha):
        if c != 0:
            coeffs[f"alpha_{m}_{p}_{g}"] = _format_complex(complex(c))
    for (m, p, g), c in np.ndenumerate(pa.forward_gmp.beta):
        if c != 0:
            coeffs[f"beta_{m}_{p}_{g + 1}"] = _format_complex(complex(c))
    parser["gmp"] = coeffs
    parser["noise"] = {"std": repr(pa.noise_std), "seed": str(pa.noise_seed)}
    if pa.saturation_limit is not None:
        parser["noise"]["saturation_limit"] = repr(pa.saturation_limit)
    with open(path, "w") as fh:
        parser.write(fh)


def _preset_from_parser(parser: configparser.ConfigParser) -> SurrogatePa:
    gmp_section = dict(parser["gmp"])
    orders = GmpOrders(
        int(gmp_section.pop("n_m")), int(gmp_section.pop("n_p")), int(gmp_section.pop("n_g"))
    )
    alpha = np.zeros((orders.n_m + 1, orders.n_p + 1, orders.n_g + 1), dtype=np.complex128)
    beta = np.zeros((orders.n_m + 1, orders.n_p + 1, orders.n_g), dtype=np.complex128)
    for key, value in gmp_section.items():
        kind, m, p, g = key.rsplit("_", 3)
        if kind == "alpha":
            alpha[int(m), int(p), int(g)] = complex(value)
        elif kind == "beta":
            beta[int(m), int(p), int(g) - 1] = complex(value)
        else:
            raise RejectedInputError(f"unknown preset coefficient {key!r}")
    taps = [complex(v) for _, v in sorted(parser["prefilter"].items(), key=lambda kv: int(kv[0].rsplit("_", 1)[1]))]
    noise = parser["noise"] if parser.has_section("noise") else {}
    sat = noise.get("saturation_limit")
    return SurrogatePa(
        forward_gmp=GmpModel(orders=orders, alpha=alpha, beta=beta),
        prefilter=np.asarray(taps),
        noise_std=float(noise.get("std", 0.0)),
        noise_seed=int(noise.get("seed", 0)),
        saturation_limit=float(sat) if sat is not None else None,
        preset_id=parser["preset"].get("id", "unnamed"),
    )


def load_preset(path) -> SurrogatePa:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(path)
    return _preset_from_parser(parser)


def mild_preset() -> SurrogatePa:
    """The packaged mild-nonlinearity default (calibrated for unit-RMS drive)."""
    parser = configparser.ConfigParser()
    parser.read_string(resources.files("ilcdpd").joinpath("presets/mild.ini").read_text())
    return _preset_from_parser(parser)
