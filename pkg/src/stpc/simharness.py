"""Closed-loop simulation, plaintext reference controllers and the latency benchmark."""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import stats
from scipy.signal import cont2discrete

from .controller import ControllerSpec, InProcessSession
from .dealer import gen_triple, gen_trunc_pair
from .fixedpoint import encode, in_int_range, quantize
from .modring import ZqMatrix, sample_signed, sample_uniform
from .protocols import round_half_up, run_inprocess_mult, run_inprocess_trunc
from .rng import make_rng
from .sharing import share


class InvariantViolation(AssertionError):
    """A run broke the trajectory law, the drift bound or the overflow margin."""


class ParameterViolation(OverflowError):
    """An intermediate value left Z_kappa; the modulus is too small for this run."""


# --- plant -----------------------------------------------------------------------

@dataclass
class PlantSpec:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    x0: np.ndarray
    delay: int = 1
    ky: int = 18
    ly: int = 9
    label: str = ""

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n \
                or self.x0.shape != (n,):
            raise ValueError("plant matrices do not conform")
        if self.delay not in (0, 1):
            raise ValueError("delay must be 0 or 1")

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass
class PlantState:
    x: np.ndarray
    pending: np.ndarray  # input waiting to be applied (delay = 1)


def initial_state(plant: PlantSpec) -> PlantState:
    return PlantState(plant.x0.copy(), np.zeros(plant.n_inputs))


def measure(plant: PlantSpec, x: np.ndarray) -> np.ndarray:
    """``C x`` quantized to Q_{ky,ly}; returns exact Fractions."""
    return quantize(plant.C @ x, plant.ky, plant.ly)


def plant_step(plant: PlantSpec, state: PlantState, u) -> tuple[PlantState, np.ndarray]:
    """Advance one sample. With ``delay=1`` the input computed now acts one step later."""
    u = np.array([float(v) for v in np.asarray(u, dtype=object).reshape(-1)])
    applied = state.pending if plant.delay else u
    x = plant.A @ state.x + plant.B @ applied
    new = PlantState(x, u.copy() if plant.delay else np.zeros_like(u))
    return new, measure(plant, x)


# Synthetic rotary-pendulum-like plant. Continuous states are
# (arm angle, pendulum angle, arm rate, pendulum rate) in radians, one voltage
# input; the parameters were picked by a numerical search so that the
# pendulum gains shipped in ``controller`` stabilise it with a one-sample
# input delay at 40 ms. These are not measured hardware parameters.
DEMO_PLANT_CONTINUOUS = {
    "A": [[0, 0, 1, 0], [0, 0, 0, 1], [0, 2.57, -19.34, 0], [0, 50.67, -1.22, 0]],
    "B": [[0], [0], [6.83], [5.49]],
    "C": [[1, 0, 0, 0], [0, 1, 0, 0]],
}


def discretize(A, B, C, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    C = np.atleast_2d(np.asarray(C, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Ad, Bd, Cd, _, _ = cont2discrete((np.asarray(A, dtype=float), B, C,
                                      np.zeros((C.shape[0], B.shape[1]))), dt, method="zoh")
    return Ad, Bd, Cd


def demo_plant(x0=(0.0, 0.05, 0.0, 0.0), dt: float = 0.04, delay: int = 1) -> PlantSpec:
    Ad, Bd, Cd = discretize(**DEMO_PLANT_CONTINUOUS, dt=dt)
    return PlantSpec(Ad, Bd, Cd, np.asarray(x0), delay, label="synthetic rotary pendulum (not measured)")


def plant_from_dict(d: dict | None) -> PlantSpec:
    if not d or d.get("kind", "demo") == "demo":
        d = d or {}
        return demo_plant(d.get("x0", (0.0, 0.05, 0.0, 0.0)), d.get("dt", 0.04), d.get("delay", 1))
    A, B, C = d["A"], d["B"], d["C"]
    if d.get("continuous", False):
        A, B, C = discretize(A, B, C, d.get("dt", 0.04))
    return PlantSpec(A, B, C, d["x0"], d.get("delay", 1), d.get("ky", 18), d.get("ly", 9),
                     d.get("label", "custom"))


def closed_loop_matrix(plant: PlantSpec, spec: ControllerSpec) -> np.ndarray:
    """Linear closed-loop map of (plant state, controller state, input buffer)."""
    A, B, C, D = (getattr(spec, k).to_float() for k in "ABCD")
    n_p, n_c, m = plant.A.shape[0], spec.n, spec.m
    if plant.delay:
        N = n_p + n_c + m
        M = np.zeros((N, N))
        M[:n_p, :n_p] = plant.A
        M[:n_p, n_p + n_c:] = plant.B
        M[n_p + n_c:, :n_p] = D @ plant.C
        M[n_p + n_c:, n_p:n_p + n_c] = C
    else:
        N = n_p + n_c
        M = np.zeros((N, N))
        M[:n_p, :n_p] = plant.A + plant.B @ D @ plant.C
        M[:n_p, n_p:] = plant.B @ C
    M[n_p:n_p + n_c, :n_p] = B @ plant.C
    M[n_p:n_p + n_c, n_p:n_p + n_c] = A
    return M


# --- reference controllers -------------------------------------------------------

class IntegerReference:
    """Encoded recursion with exact integers: ``x+ = round(A x + B y)``, ``u = C x + D y``.

    Works on the ``2^ell``-scaled state and checks every pre-truncation value
    against the ``kappa``-bit range.
    """

    def __init__(self, spec: ControllerSpec, x_bar=None):
        self.spec = spec
        self.phi = spec.phi_ints()
        self.x_bar = (spec.x0.ints.copy() if x_bar is None
                      else np.asarray(x_bar, dtype=object).reshape(-1, 1))

    def pre_products(self, x_bar, y_bar) -> tuple[np.ndarray, np.ndarray]:
        """``(A_bar x + B_bar y, C_bar x + D_bar y)`` before any truncation."""
        xi = np.vstack([np.asarray(x_bar, dtype=object).reshape(-1, 1),
                        np.asarray(y_bar, dtype=object).reshape(-1, 1)])
        psi = self.phi.dot(xi)
        n = self.spec.n
        kappa = self.spec.kappa
        if any(not in_int_range(int(v), kappa) for v in psi.flat):
            raise ParameterViolation(f"intermediate value outside Z_{kappa}")
        return psi[:n], psi[n:]

    def step(self, y_bar, x_bar=None) -> tuple[np.ndarray, np.ndarray]:
        """Advance from ``x_bar`` (default: own state); returns ``(x_bar_next, u_bar)``."""
        x = self.x_bar if x_bar is None else np.asarray(x_bar, dtype=object).reshape(-1, 1)
        x_pre, u_bar = self.pre_products(x, y_bar)
        x_next = round_half_up(x_pre, self.spec.ell)
        self.x_bar = x_next
        return x_next, u_bar


class RealReference:
    """The controller in double precision."""

    def __init__(self, spec: ControllerSpec):
        self.A, self.B, self.C, self.D = (getattr(spec, k).to_float() for k in "ABCD")
        self.x = spec.x0.to_float().reshape(-1)

    def step(self, y) -> tuple[np.ndarray, np.ndarray]:
        y = np.array([float(v) for v in np.asarray(y, dtype=object).reshape(-1)])
        u = self.C @ self.x + self.D @ y
        self.x = self.A @ self.x + self.B @ y
        return self.x, u


def reference_controller_step(ref: IntegerReference | RealReference, y):
    """One step of either reference; the integer one expects encoded measurements."""
    return ref.step(y)


def drift_bound(spec: ControllerSpec) -> float:
    """Worst-case encoded-state deviation caused by truncation: ``(3/2) sqrt(n) c / (1 - gamma)``."""
    c, gamma = spec.contraction()
    c, gamma = float(Fraction(str(c))), float(Fraction(str(gamma)))
    return 1.5 * math.sqrt(spec.n) * c / (1 - gamma)


# --- closed loop -----------------------------------------------------------------

@dataclass
class StepLog:
    step: int
    y: np.ndarray                 # exact measurement
    u: np.ndarray                 # exact input from the secure path
    u_ref_int: np.ndarray         # C_bar x_bar + D_bar y_bar on the reconstructed state
    u_ref_real: np.ndarray        # floating-point reference
    rtt_ms: float
    x_bar_next: np.ndarray | None = None
    w: np.ndarray | None = None
    drift: int | None = None      # ||x_bar - x_bar_oracle||_inf, encoded units


@dataclass
class RunLog:
    mode: str
    records: list[StepLog] = field(default_factory=list)
    drift_bound: float | None = None
    violations: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def lines(self) -> Iterable[str]:
        for r in self.records:
            parts = [
                f"step={r.step}",
                "y=" + ",".join(str(float(v)) for v in r.y.flat),
                "u=" + ",".join(repr(float(v)) for v in r.u.flat),
                "u_ref=" + ",".join(repr(float(v)) for v in r.u_ref_real.flat),
                f"rtt_ms={r.rtt_ms:.3f}",
            ]
            if r.w is not None:
                parts.append("w=" + ",".join(str(int(v)) for v in r.w.flat))
                parts.append(f"drift={r.drift}")
            yield " ".join(parts)


def _check_step(spec, ref_int, oracle, x_bar, y_bar, x_next, u_bar, bound_units, t, log):
    x_pre, u_exp = ref_int.pre_products(x_bar, y_bar)
    if not all(int(a) == int(b) for a, b in zip(u_bar.flat, u_exp.flat)):
        log.violations.append(f"step {t}: input differs from C_bar x_bar + D_bar y_bar")
    w = np.asarray(x_next, dtype=object) - round_half_up(x_pre, spec.ell)
    if any(int(v) not in (-1, 0, 1) for v in w.flat):
        log.violations.append(f"step {t}: truncation error outside {{-1,0,1}}")
    o_next, _ = oracle.step(y_bar)
    drift = max(abs(int(a) - int(b)) for a, b in zip(np.asarray(x_next).flat, o_next.flat))
    if drift > bound_units:
        log.violations.append(f"step {t}: drift {drift} exceeds bound {bound_units:.4f}")
    return w, drift


def run_closed_loop(mode: str, spec: ControllerSpec, plant: PlantSpec | None, steps: int, *,
                    measurements: Sequence | None = None, seed=None, audit: bool = True,
                    cfg=None, strict: bool = True) -> RunLog:
    """Run the secure controller against a plant (or a fixed measurement sequence).

    ``mode`` is ``"inprocess"`` or ``"networked"`` (the latter starts two local
    party processes unless ``cfg`` lists reachable parties). With ``audit``
    the encoded state is reconstructed every step to check the trajectory
    law and the drift bound; ``strict`` raises on the first violation.
    """
    if mode not in ("inprocess", "networked"):
        raise ValueError(f"unknown mode {mode!r}")
    if plant is None and measurements is None:
        raise ValueError("need a plant or a measurement sequence")
    log = RunLog(mode)
    if steps == 0:
        return log
    bound = drift_bound(spec)
    log.drift_bound = bound
    ref_int = IntegerReference(spec)
    oracle = IntegerReference(spec)
    ref_real = RealReference(spec)

    if mode == "inprocess":
        session = InProcessSession(spec, seed=seed, audit=audit)
        stepper, closer = _inprocess_stepper(session), session.close
    else:
        stepper, closer = _networked_stepper(spec, cfg, seed, audit)

    state = initial_state(plant) if plant is not None else None
    y = measure(plant, state.x) if plant is not None else None
    x_bar = spec.x0.ints.copy()
    try:
        for t in range(steps):
            if measurements is not None:
                y = np.asarray(measurements[t], dtype=object).reshape(-1)
            y_col = np.asarray(y, dtype=object).reshape(-1, 1)
            y_bar = encode(y_col, spec.ell, spec.k)
            u, u_bar, x_next, rtt = stepper(y_col)
            _, u_real = ref_real.step(y_col)
            u_ref_int = ref_int.pre_products(x_bar, y_bar)[1]
            rec = StepLog(t, y_col, u, u_ref_int, u_real, rtt * 1e3)
            if audit:
                w, drift = _check_step(spec, ref_int, oracle, x_bar, y_bar, x_next, u_bar,
                                       bound, t, log)
                rec.x_bar_next, rec.w, rec.drift = x_next, w, drift
                x_bar = x_next
                if strict and log.violations:
                    raise InvariantViolation(log.violations[0])
            log.records.append(rec)
            if plant is not None:
                state, y = plant_step(plant, state, u)
    finally:
        closer()
    return log


def _inprocess_stepper(session: InProcessSession):
    def step(y_col):
        t0 = time.perf_counter()
        rec = session.step(y_col)
        return rec.u, rec.u_bar, rec.x_bar_next, time.perf_counter() - t0
    return step


def _networked_stepper(spec, cfg, seed, audit):
    from .net.client import NetworkClient
    from .net.config import config_for
    from .net.launch import LocalParties

    launcher = None
    if cfg is None:
        cfg = config_for(spec, audit=audit)
        launcher = LocalParties(cfg)
        cfg = launcher.start()
    cfg.audit = audit
    client = NetworkClient(cfg, spec, seed)
    try:
        client.connect()
        client.setup()
    except BaseException:
        if launcher is not None:
            launcher.stop()
        raise

    def step(y_col):
        rec = client.step(list(y_col.reshape(-1)))
        if rec.timed_out:
            raise InvariantViolation(f"step {rec.step} timed out")
        return rec.u, rec.u_bar, rec.x_bar_next, rec.rtt_s

    def close():
        client.close()
        if launcher is not None:
            launcher.wait()
            launcher.stop()

    return step, close


def random_measurements(steps: int, p: int, ky: int = 18, ly: int = 9, seed=None) -> list:
    """Uniform random points of Q_{ky,ly}^p (exact Fractions)."""
    rng = make_rng(seed, "measurements")
    ints = sample_signed(steps, p, ky, rng)
    return [[Fraction(int(z), 1 << ly) for z in row] for row in ints]


# --- subprotocol benchmark ------------------------------------------------------------

DEFAULT_DIMS = tuple(range(10, 101, 10))
CSV_COLUMNS = ("protocol", "dim", "min_ms", "mean_ms", "max_ms", "ci99_lo", "ci99_hi")


@dataclass(frozen=True)
class BenchRow:
    protocol: str
    dim: int
    min_ms: float
    mean_ms: float
    max_ms: float
    ci99_lo: float
    ci99_hi: float


def summarize(protocol: str, dim: int, samples_ms: Sequence[float]) -> BenchRow:
    """Min/mean/max and a Student-t 99% interval for the mean."""
    n = len(samples_ms)
    if n < 2:
        raise ValueError("need at least two repetitions")
    mean = statistics.fmean(samples_ms)
    sem = statistics.stdev(samples_ms) / math.sqrt(n)
    if sem > 0:
        lo, hi = stats.t.interval(0.99, n - 1, loc=mean, scale=sem)
    else:
        lo = hi = mean
    return BenchRow(protocol, dim, min(samples_ms), mean, max(samples_ms), float(lo), float(hi))


def bench_subprotocols(dims: Sequence[int] = DEFAULT_DIMS, reps: int = 100, mode: str = "inprocess",
                       protocols: Sequence[str] = ("mult", "trunc"), spec: ControllerSpec | None = None,
                       cfg=None, seed=None) -> list[BenchRow]:
    """Round-trip timings for multiplication ``(d, d) x (d, 1)`` and truncation ``(d, 1)``.

    Randomness and shares are prepared before each timed interval; the clock
    runs from the first send to the last result received.
    """
    if reps < 2:
        raise ValueError("reps must be >= 2")
    if spec is None:
        from .controller import pendulum_controller
        spec = pendulum_controller()
    rng = make_rng(seed, "bench")
    rows: list[BenchRow] = []
    if mode == "inprocess":
        q = spec.modulus
        for proto in protocols:
            for d in dims:
                samples = []
                for _ in range(reps):
                    if proto == "mult":
                        xs = share(sample_uniform(d, d, q, rng), rng)
                        ys = share(sample_uniform(d, 1, q, rng), rng)
                        t = gen_triple(d, d, 1, q, rng)
                        t0 = time.perf_counter()
                        run_inprocess_mult(xs, ys, t)
                    else:
                        xs = share(ZqMatrix(sample_signed(d, 1, spec.kappa, rng), q), rng)
                        pair = gen_trunc_pair(d, 1, q, spec.ell, spec.lam, rng)
                        t0 = time.perf_counter()
                        run_inprocess_trunc(xs, pair)
                    samples.append((time.perf_counter() - t0) * 1e3)
                rows.append(summarize(proto, d, samples))
        return rows
    if mode != "networked":
        raise ValueError(f"unknown mode {mode!r}")

    from .net.client import NetworkClient
    from .net.config import config_for
    from .net.launch import LocalParties

    launcher = None
    if cfg is None:
        launcher = LocalParties(config_for(spec))
        cfg = launcher.start()
    try:
        with NetworkClient(cfg, spec) as client:
            client.connect()
            for proto in protocols:
                for d in dims:
                    samples = []
                    for _ in range(reps):
                        if proto == "mult":
                            dt, _ = client.bench_mult(d, d, 1, rng)
                        else:
                            dt, _ = client.bench_trunc(d, 1, rng)
                        samples.append(dt * 1e3)
                    rows.append(summarize(proto, d, samples))
        if launcher is not None:
            launcher.wait()
    finally:
        if launcher is not None:
            launcher.stop()
    return rows


def write_csv(rows: Sequence[BenchRow], fh=None) -> str:
    buf = fh or io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.protocol, r.dim] + [f"{getattr(r, c):.6f}" for c in CSV_COLUMNS[2:]])
    return buf.getvalue() if fh is None else ""


def read_csv(text: str) -> list[BenchRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected columns {reader.fieldnames}")
    return [BenchRow(r["protocol"], int(r["dim"]), *(float(r[c]) for c in CSV_COLUMNS[2:]))
            for r in reader]
