"""Impulse responses, contamination and correlation analytics.

Everything here is a pure function of its inputs (plus explicit seeds).
Correlations are raw, unnormalised sums so that the convolution identity

    xcorr(x, x * h)[n] == (h * xcorr(x, x))[n]

holds exactly (up to floating point).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

SPEED_OF_SOUND = 343.0
DECAY_60DB = 3.0 * math.log(10.0)  # ln(10**3) ~= 6.908
CAUSALITY_TOL = 1e-12


class AcousticsError(ValueError):
    pass


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AcousticsError("signal must be one-dimensional")
        if int(self.sample_rate) <= 0:
            raise AcousticsError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise AcousticsError("signal contains NaN or Inf")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class ImpulseResponse:
    signal: Signal
    direct_path_index: int = 0
    t60_estimate: float | None = None
    name: str = ""

    def __post_init__(self):
        h = self.signal.samples
        d = int(self.direct_path_index)
        if not 0 <= d < len(h):
            raise AcousticsError(f"direct_path_index {d} outside IR of length {len(h)}")
        if d and np.max(np.abs(h[:d])) > CAUSALITY_TOL:
            raise AcousticsError("impulse response is not causal w.r.t. its direct path")
        object.__setattr__(self, "direct_path_index", d)

    @property
    def samples(self) -> np.ndarray:
        return self.signal.samples

    @property
    def sample_rate(self) -> int:
        return self.signal.sample_rate

    def __len__(self):
        return len(self.signal)

    def with_t60(self) -> "ImpulseResponse":
        """Return a copy carrying its Schroeder T60 estimate."""
        return replace(self, t60_estimate=schroeder_t60(self))


def identity_ir(sample_rate: int, name: str = "identity") -> ImpulseResponse:
    return ImpulseResponse(Signal(np.ones(1), sample_rate), 0, 0.0, name)


@dataclass(frozen=True)
class RoomSpec:
    """Shoebox room for the image method.

    Exactly one of ``target_t60`` and ``wall_reflection_coefficient`` is used;
    ``target_t60`` wins when both are given. ``max_reflection_order=None``
    keeps every image that arrives within ``length_s``.
    """

    dimensions: tuple[float, float, float]
    source_position: tuple[float, float, float]
    mic_position: tuple[float, float, float]
    target_t60: float | None = None
    wall_reflection_coefficient: float | None = None
    max_reflection_order: int | None = 12
    sample_rate: int = 16000
    speed_of_sound: float = SPEED_OF_SOUND
    length_s: float | None = None

    def validate(self):
        dims = np.asarray(self.dimensions, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise AcousticsError("room dimensions must be three positive lengths (zero-volume room)")
        for label, pos in (("source", self.source_position), ("mic", self.mic_position)):
            p = np.asarray(pos, dtype=float)
            if p.shape != (3,) or np.any(p <= 0) or np.any(p >= dims):
                raise AcousticsError(f"{label} position {tuple(p)} is not strictly inside the room")
        if self.target_t60 is not None and self.target_t60 < 0:
            raise AcousticsError("target_t60 must be non-negative")
        if self.target_t60 is None:
            beta = self.wall_reflection_coefficient
            if beta is None:
                raise AcousticsError("need target_t60 or wall_reflection_coefficient")
            if not 0 <= beta < 1:
                raise AcousticsError(f"reflection coefficient must lie in [0, 1), got {beta}")
        if self.max_reflection_order is not None and self.max_reflection_order < 0:
            raise AcousticsError("max_reflection_order must be >= 0")
        if self.sample_rate <= 0 or self.speed_of_sound <= 0:
            raise AcousticsError("sample_rate and speed_of_sound must be positive")


def sabine_reflection_coefficient(dimensions, t60: float) -> float:
    """Uniform wall reflection coefficient giving ``t60`` under Sabine's formula.

    Solves T60 = 0.161 V / (S (1 - beta^2)) for beta, with S the total wall area.
    """
    lx, ly, lz = (float(d) for d in dimensions)
    if t60 == 0:
        return 0.0
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = 0.161 * volume / (surface * t60)
    if alpha > 1:
        raise AcousticsError(f"T60={t60}s is unreachable in a room of {dimensions} m")
    return math.sqrt(1.0 - alpha)


def image_method_ir(room: RoomSpec, name: str = "") -> ImpulseResponse:
    """Shoebox image-source IR with 1/(4 pi d) spreading and nearest-sample delays."""
    room.validate()
    dims = np.asarray(room.dimensions, dtype=float)
    src = np.asarray(room.source_position, dtype=float)
    mic = np.asarray(room.mic_position, dtype=float)
    fs, c = room.sample_rate, room.speed_of_sound
    if room.target_t60 is not None:
        beta = sabine_reflection_coefficient(dims, room.target_t60)
        t60_hint = room.target_t60
    else:
        beta = float(room.wall_reflection_coefficient)
        t60_hint = None

    direct_dist = float(np.linalg.norm(src - mic))
    direct_index = int(round(direct_dist * fs / c))
    order = room.max_reflection_order
    if room.length_s is not None:
        n_samples = int(round(room.length_s * fs))
    elif beta == 0:
        n_samples = direct_index + 1
    elif order is None:
        n_samples = int(round(1.2 * (t60_hint or 1.0) * fs)) + direct_index
    else:
        # long enough for every image up to the requested order
        n_samples = int(math.ceil((order + 1) * np.linalg.norm(dims) * fs / c)) + direct_index + 1
    if n_samples <= direct_index:
        raise AcousticsError("IR length too short to hold the direct path")
    max_dist = n_samples * c / fs

    reach = np.ceil(max_dist / (2 * dims)).astype(int) + 1
    if order is not None:
        reach = np.minimum(reach, order // 2 + 2)
    grids = [np.arange(-r, r + 1) for r in reach]
    n = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, 3)

    h = np.zeros(n_samples)
    for q in np.ndindex(2, 2, 2):
        q = np.asarray(q)
        image = (1 - 2 * q) * src + 2 * n * dims
        n_refl = np.abs(n - q).sum(axis=1) + np.abs(n).sum(axis=1)
        dist = np.linalg.norm(image - mic, axis=1)
        delay = np.rint(dist * fs / c).astype(np.int64)
        keep = delay < n_samples
        if order is not None:
            keep &= n_refl <= order
        gain = np.power(beta, n_refl[keep]) / (4 * np.pi * dist[keep])
        np.add.at(h, delay[keep], gain)
    h[:direct_index] = 0.0
    return ImpulseResponse(Signal(h, fs), direct_index, None, name)


def decay_envelope(t, t60: float):
    """Amplitude envelope falling by 60 dB (10**-3) at ``t == t60``."""
    return np.exp(-DECAY_60DB * np.asarray(t, dtype=float) / t60)


def exp_decay_ir(t60: float, fs: int, length: float, seed: int,
                 tail_gain: float = 0.1, name: str = "") -> ImpulseResponse:
    """Unit direct spike followed by exponentially decaying white noise.

    ``tail_gain`` is the noise amplitude at t = 0; it sets the
    direct-to-reverberant ratio.
    """
    if t60 <= 0 or fs <= 0:
        raise AcousticsError("t60 and fs must be positive")
    if length < t60:
        raise AcousticsError(f"IR length {length}s shorter than t60={t60}s")
    n = int(round(length * fs))
    rng = np.random.default_rng(seed)
    t = np.arange(n) / fs
    h = tail_gain * rng.standard_normal(n) * decay_envelope(t, t60)
    h[0] = 1.0
    return ImpulseResponse(Signal(h, fs), 0, None, name)


def _check_rates(a: Signal, b: Signal):
    if a.sample_rate != b.sample_rate:
        raise AcousticsError(f"sample rate mismatch: {a.sample_rate} vs {b.sample_rate}")


def _as_signal(x) -> Signal:
    return x.signal if isinstance(x, ImpulseResponse) else x


def convolve(x: Signal, h) -> Signal:
    """Full linear convolution, length ``len(x) + len(h) - 1``."""
    h = _as_signal(h)
    _check_rates(x, h)
    if len(x) == 0 or len(h) == 0:
        raise AcousticsError("cannot convolve empty signals")
    if len(h) == 1:
        out = x.samples * h.samples[0]
    else:
        out = fftconvolve(x.samples, h.samples)
    return Signal(out, x.sample_rate)


def signal_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def mix_noise_at_snr(y: Signal, v: Signal, snr_db: float) -> Signal:
    """Return ``y + alpha * v`` with alpha chosen so that the SNR is ``snr_db``.

    ``v`` is truncated or zero-padded to ``len(y)``; powers are measured
    over ``len(y)`` samples. ``snr_db = inf`` disables the noise.
    """
    _check_rates(y, v)
    if len(y) == 0 or len(v) == 0:
        raise AcousticsError("cannot mix empty signals")
    if math.isinf(snr_db) and snr_db > 0:
        return Signal(y.samples.copy(), y.sample_rate)
    noise = np.zeros(len(y))
    m = min(len(y), len(v))
    noise[:m] = v.samples[:m]
    p_noise = signal_power(noise)
    if p_noise == 0:
        raise AcousticsError("noise has zero power over the signal span")
    alpha = math.sqrt(signal_power(y.samples) / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Signal(y.samples + alpha * noise, y.sample_rate)


def measured_snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * math.log10(signal_power(clean) / signal_power(noise))


def energy_decay_curve_db(h) -> np.ndarray:
    """Schroeder backward-integrated energy decay, normalised to 0 dB."""
    e = np.square(_as_signal(h).samples)
    edc = np.cumsum(e[::-1])[::-1]
    if edc[0] <= 0:
        raise AcousticsError("impulse response has zero energy")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


def schroeder_t60(h, fit_range_db=(-5.0, -25.0)) -> float:
    """T60 from a line fit of the EDC between -5 and -25 dB (T20, extrapolated x3)."""
    sig = _as_signal(h)
    edc = energy_decay_curve_db(sig)
    hi, lo = fit_range_db
    idx = np.flatnonzero((edc <= hi) & (edc >= lo))
    if idx.size < 2 or not np.any(edc < lo):
        raise AcousticsError("decay range not reached")
    t = idx / sig.sample_rate
    slope, _ = np.polyfit(t, edc[idx], 1)
    if slope >= 0:
        raise AcousticsError("decay range not reached")
    return float(-60.0 / slope)


@dataclass(frozen=True)
class CorrelationSeries:
    """Values at integer lags ``-max_lag..max_lag`` (samples)."""

    values: np.ndarray
    sample_rate: int | None = None
    lag_unit: str = field(default="samples")

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] % 2 != 1:
            raise AcousticsError("correlation series needs odd length 2L+1")
        if not np.all(np.isfinite(v)):
            raise AcousticsError("correlation series contains NaN or Inf")
        object.__setattr__(self, "values", v)

    @property
    def max_lag(self) -> int:
        return (self.values.shape[0] - 1) // 2

    @property
    def center_index(self) -> int:
        return self.max_lag

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.max_lag, self.max_lag + 1)

    def at(self, lag: int) -> float:
        return float(self.values[self.center_index + lag])


def _raw_xcorr(x: np.ndarray, y: np.ndarray, max_lag: int) -> np.ndarray:
    # R_xy[n] = sum_k x[k] y[k + n]  ==  (y conv reversed(x))[n + len(x) - 1]
    full = fftconvolve(y, x[::-1]) if min(len(x), len(y)) > 1 else np.convolve(y, x[::-1])
    zero = len(x) - 1
    out = np.zeros(2 * max_lag + 1)
    lo, hi = zero - max_lag, zero + max_lag + 1
    src_lo, src_hi = max(lo, 0), min(hi, full.shape[0])
    out[src_lo - lo:src_hi - lo] = full[src_lo:src_hi]
    return out


def xcorr(x: Signal, y: Signal, max_lag: int) -> CorrelationSeries:
    """Raw cross-correlation R_xy[n] = sum_k x[k] y[k+n] for |n| <= max_lag."""
    _check_rates(x, y)
    max_lag = int(max_lag)
    if max_lag < 0 or max_lag >= min(len(x), len(y)):
        raise AcousticsError(f"max_lag {max_lag} out of range for signals of length {len(x)}, {len(y)}")
    return CorrelationSeries(_raw_xcorr(x.samples, y.samples, max_lag), x.sample_rate)


def avg_xcorr_envelope(corpus_clean, corpus_rev, window_ms: float = 200.0,
                       hop_ms: float = 10.0) -> CorrelationSeries:
    """Mean |R_xy| over sliding windows of every (clean, reverberated) pair.

    Windows never straddle utterances. The reverberated signal is read over
    the same sample span as the clean one.
    """
    if not corpus_clean:
        raise AcousticsError("empty corpus")
    if len(corpus_clean) != len(corpus_rev):
        raise AcousticsError("clean and reverberated corpora are not paired")
    fs = corpus_clean[0].sample_rate
    win = int(round(window_ms * fs / 1000.0))
    hop = int(round(hop_ms * fs / 1000.0))
    max_lag = win // 2
    total = np.zeros(2 * max_lag + 1)
    count = 0
    for x, y in zip(corpus_clean, corpus_rev):
        _check_rates(x, y)
        if x.sample_rate != fs:
            raise AcousticsError("mixed sample rates in corpus")
        xs, ys = x.samples, y.samples
        for start in range(0, len(xs) - win + 1, hop):
            seg_y = ys[start:start + win]
            if seg_y.shape[0] < win:
                seg_y = np.pad(seg_y, (0, win - seg_y.shape[0]))
            total += np.abs(_raw_xcorr(xs[start:start + win], seg_y, max_lag))
            count += 1
    if count == 0:
        raise AcousticsError("no utterance is as long as one window")
    return CorrelationSeries(total / count, fs)


def side_energy_ratio(c: CorrelationSeries) -> float:
    """Energy on positive lags over energy on negative lags."""
    v = c.values
    mid = c.center_index
    past = float(np.sum(np.square(v[:mid])))
    future = float(np.sum(np.square(v[mid + 1:])))
    if past == 0:
        raise AcousticsError("zero past-side energy")
    return future / past


def autocorr_effective_length(x: Signal, energy_fraction: float = 0.999) -> float:
    """Smallest lag span (ms) whose R_xx energy reaches ``energy_fraction`` of the total."""
    if not 0 < energy_fraction < 1:
        raise AcousticsError("energy_fraction must lie in (0, 1)")
    if len(x) == 0:
        raise AcousticsError("empty signal")
    r = _raw_xcorr(x.samples, x.samples, len(x) - 1)
    e = np.square(r)
    mid = len(x) - 1
    # cumulative energy over [-lag, +lag]
    cum = e[mid] + np.concatenate(([0.0], np.cumsum(e[mid + 1:] + e[:mid][::-1])))
    total = cum[-1]
    if total == 0:
        raise AcousticsError("signal has zero energy")
    lag = int(np.searchsorted(cum, energy_fraction * total, side="left"))
    return 1000.0 * lag / x.sample_rate


# --- persistence -----------------------------------------------------------

def write_wav(path, x: Signal, float32: bool = True):
    path = Path(path)
    if float32:
        data = x.samples.astype("<f4")
    else:
        peak = np.max(np.abs(x.samples)) if len(x) else 0.0
        if peak > 1.0:
            raise AcousticsError("16-bit PCM needs samples within [-1, 1]")
        data = np.round(x.samples * 32767.0).astype("<i2")
    wavfile.write(path, x.sample_rate, data)


def read_wav(path) -> Signal:
    fs, data = wavfile.read(Path(path))
    if data.ndim != 1:
        raise AcousticsError(f"{path}: only mono WAV is supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32767.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AcousticsError(f"{path}: unsupported sample format {data.dtype}")
    return Signal(samples, fs)


def write_ir(path, h: ImpulseResponse):
    """WAV plus a ``key=value`` sidecar next to it (``.txt``)."""
    path = Path(path)
    write_wav(path, h.signal)
    lines = [
        f"name={h.name}",
        f"sample_rate={h.sample_rate}",
        f"direct_path_index={h.direct_path_index}",
        f"t60_estimate={'' if h.t60_estimate is None else repr(float(h.t60_estimate))}",
    ]
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def read_ir(path) -> ImpulseResponse:
    path = Path(path)
    sig = read_wav(path)
    meta = {}
    for line in path.with_suffix(".txt").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    if int(meta.get("sample_rate", sig.sample_rate)) != sig.sample_rate:
        raise AcousticsError(f"{path}: sidecar sample_rate disagrees with WAV header")
    t60 = meta.get("t60_estimate") or None
    return ImpulseResponse(sig, int(meta.get("direct_path_index", 0)),
                           None if t60 is None else float(t60), meta.get("name", path.stem))


def calibrated_image_ir(room: RoomSpec, rel_tol: float = 0.02, max_iter: int = 30,
                        name: str = "") -> ImpulseResponse:
    """Image-method IR whose wall coefficient is bisected until the measured
    Schroeder T60 matches ``room.target_t60`` within ``rel_tol``.

    Sabine's coefficient is the starting point. Useful when every image is
    kept (``max_reflection_order=None``): a shoebox with uniform walls decays
    more slowly than the diffuse-field formula predicts.
    """
    room.validate()
    target = room.target_t60
    if target is None or target <= 0:
        raise AcousticsError("calibration needs a positive target_t60")
    base = replace(room, target_t60=None, wall_reflection_coefficient=0.0)

    def build(beta):
        return image_method_ir(replace(base, wall_reflection_coefficient=beta), name=name)

    def measure(beta):
        try:
            return schroeder_t60(build(beta))
        except AcousticsError:
            return 0.0

    lo, hi = 0.0, 0.9999
    beta = sabine_reflection_coefficient(room.dimensions, target)
    for _ in range(max_iter):
        t60 = measure(beta)
        if abs(t60 - target) <= rel_tol * target:
            break
        if t60 < target:
            lo = beta
        else:
            hi = beta
        beta = 0.5 * (lo + hi)
    else:
        raise AcousticsError(f"could not calibrate walls to T60={target}s")
    h = build(beta)
    return replace(h, t60_estimate=t60)
