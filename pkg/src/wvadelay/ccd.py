"""CCD exposure model: Poisson photoelectrons, gain, ADC clipping, frame I/O."""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import EmptyIntensityError, FormatError, InvalidArgumentError

FRAME_MAGIC = b"WVAFRM01"
# magic, rows, cols, bit depth, frame index, seed -> 32 bytes
_HEADER = struct.Struct("<8sIIIIQ")


@dataclass(frozen=True)
class CcdSpec:
    pixel_pitch: float = 1.85e-6
    rows: int = 1024
    cols: int = 1024
    bit_depth: int = 8
    quantum_efficiency: float = 0.856
    gain: float = 1.0

    def __post_init__(self):
        if not 0 < self.quantum_efficiency <= 1:
            raise InvalidArgumentError("quantum_efficiency must be in (0, 1]")
        if self.bit_depth not in (8, 12, 16):
            raise InvalidArgumentError("bit_depth must be 8, 12 or 16")
        if self.gain <= 0:
            raise InvalidArgumentError("gain must be > 0")

    @property
    def saturation(self):
        return 2**self.bit_depth - 1


@dataclass(frozen=True)
class Frame:
    counts: np.ndarray
    spec: CcdSpec
    index: int = 0
    timestamp: float = 0.0
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def shape(self):
        return self.counts.shape


def frame_rng(seed, index):
    """Independent generator for frame ``index`` under master ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


def expected_counts(intensity, n_r, spec, incident=False):
    """Per-pixel mean photoelectrons ``n_r I / sum(I)``.

    ``n_r`` is the detected photon number; with ``incident=True`` it is
    first multiplied by the quantum efficiency.
    """
    values = getattr(intensity, "values", intensity)
    total = float(np.sum(values))
    if not total > 0:
        raise EmptyIntensityError("intensity map sums to zero")
    if not n_r > 0:
        raise InvalidArgumentError(f"n_r must be > 0, got {n_r}")
    scale = n_r * (spec.quantum_efficiency if incident else 1.0)
    return values * (scale / total)


def expose(intensity, n_r, spec, rng, index=0, timestamp=0.0, seed=0, incident=False):
    """Draw one integer frame from a continuous intensity map.

    Poisson sampling, then gain and rounding, then clipping at
    ``2**bit_depth - 1``. ``rng`` is a ``numpy.random.Generator``; use
    :func:`frame_rng` for reproducible per-frame streams.
    """
    mu = expected_counts(intensity, n_r, spec, incident)
    electrons = rng.poisson(mu)
    if spec.gain == 1.0:
        adu = electrons
    else:
        adu = np.rint(electrons * spec.gain)
    counts = np.minimum(adu, spec.saturation).astype(np.uint16)
    return Frame(counts, spec, index=index, timestamp=timestamp, seed=seed)


def row_marginal(frame):
    """``K_m = sum_n k_mn``: sum over the transverse (x) axis."""
    counts = getattr(frame, "counts", frame)
    return np.asarray(counts, dtype=np.int64).sum(axis=1)


def saturation_fraction(frame):
    return float(np.mean(frame.counts >= frame.spec.saturation))


def expected_saturation_fraction(intensity, n_r, spec, incident=False):
    """Mean clipped-pixel fraction, from the Poisson tail of each pixel."""
    mu = expected_counts(intensity, n_r, spec, incident)
    # a pixel clips once gain * k rounds to >= saturation
    k_min = np.ceil((spec.saturation - 0.5) / spec.gain)
    return float(np.mean(stats.poisson.sf(k_min - 1, mu)))


# -- persistence ----------------------------------------------------------------


def write_pgm(frame, path):
    """16-bit binary PGM (P5, maxval 65535) with the frame metadata in a comment.

    PGM files with maxval below 256 store one byte per sample, so 16-bit
    samples need maxval >= 256; bit depth, index and seed travel in a
    ``# wvadelay`` comment instead.
    """
    rows, cols = frame.shape
    meta = f"# wvadelay bit_depth={frame.spec.bit_depth} index={frame.index} seed={frame.seed}\n"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{meta}{cols} {rows}\n65535\n".encode("ascii"))
        fh.write(np.rint(frame.counts).astype(">u2").tobytes())


def read_pgm(path, spec=None):
    """Read a binary PGM written by :func:`write_pgm` (or any P5 file)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, meta = [], {}
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise FormatError("truncated PGM header")
        if data[pos : pos + 1].isspace():
            pos += 1
            continue
        if data[pos : pos + 1] == b"#":
            end = data.index(b"\n", pos)
            words = data[pos + 1 : end].decode("ascii", "replace").split()
            if words[:1] == ["wvadelay"]:
                meta = dict(w.split("=", 1) for w in words[1:] if "=" in w)
            pos = end + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    cols, rows, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    counts = np.frombuffer(data[pos:], dtype=dtype, count=rows * cols).reshape(rows, cols)
    if spec is None:
        depth = int(meta.get("bit_depth", {255: 8, 4095: 12}.get(maxval, 16)))
        spec = CcdSpec(rows=rows, cols=cols, bit_depth=depth)
    return Frame(
        counts.astype(np.uint16),
        spec,
        index=int(meta.get("index", 0)),
        seed=int(meta.get("seed", 0)),
    )


def write_frame_bin(frame, path):
    """Flat little-endian uint16 pixels after a 32-byte header."""
    rows, cols = frame.shape
    header = _HEADER.pack(FRAME_MAGIC, rows, cols, frame.spec.bit_depth, frame.index, frame.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.rint(frame.counts).astype("<u2").tobytes())


def read_frame_bin(path, spec=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than the 32-byte frame header")
    magic, rows, cols, depth, index, seed = _HEADER.unpack_from(raw)
    if magic != FRAME_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    counts = np.frombuffer(raw, dtype="<u2", offset=_HEADER.size, count=rows * cols)
    if spec is None:
        spec = CcdSpec(rows=rows, cols=cols, bit_depth=depth)
    return Frame(counts.reshape(rows, cols).astype(np.uint16), spec, index=index, seed=seed)


def write_marginals_csv(frames, path):
    """One row per frame: frame index followed by ``K_m``."""
    with open(path, "w") as fh:
        for fr in frames:
            k = row_marginal(fr)
            fh.write(str(fr.index) + "," + ",".join(str(int(v)) for v in k) + "\n")
