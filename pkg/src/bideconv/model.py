"""Synthetic bilinear measurement instances and the robust recovery objective.

An instance couples a measurement operator pair (L, R) with observations

    y_i = <l_i, w_bar> <r_i, x_bar>,   i = 1..m,

where a seeded random subset of the measurements fails: each failed entry is
either shifted by an independent Gaussian offset or overwritten with the
measurements of an implanted second signal pair.  The recovery objective is
the scaled least-absolute-deviation loss

    f(w, x) = (1/m) sum_i | <l_i, w> <r_i, x> - y_i |,

whose subgradients and local linearizations are provided here as operator
products so structured (fast-transform) sides never get materialized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Union

import numpy as np

from .linops import (
    DenseOperator,
    DimensionError,
    HadamardSignOperator,
    MeasurementOperator,
)

LeftModel = Literal["gaussian", "hadamard"]
NoiseKind = Literal["gaussian", "implant"]


def _clean_vector(v: np.ndarray, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{what} must be a nonempty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SignalPair:
    """A candidate factor pair (w, x), the optimization variable."""

    w: np.ndarray
    x: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", _clean_vector(self.w, "w"))
        object.__setattr__(self, "x", _clean_vector(self.x, "x"))

    @property
    def d1(self) -> int:
        return self.w.size

    @property
    def d2(self) -> int:
        return self.x.size

    def stacked(self) -> np.ndarray:
        """Concatenate into a single vector of length d1 + d2."""
        return np.concatenate([self.w, self.x])

    @classmethod
    def from_stacked(cls, z: np.ndarray, d1: int) -> "SignalPair":
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 1 or not 0 < d1 < z.size:
            raise DimensionError(f"cannot split vector of shape {z.shape} at {d1}")
        return cls(w=z[:d1], x=z[d1:])


@dataclass(frozen=True)
class GroundTruth:
    """The planted pair, stored balanced: ``norm(w_bar) == norm(x_bar)``.

    The product magnitude ``norm(w_bar) * norm(x_bar)`` equals the Frobenius
    norm of the rank-one matrix ``w_bar x_bar^T`` and is the natural scale for
    error metrics and ball radii.
    """

    w_bar: np.ndarray
    x_bar: np.ndarray

    def __post_init__(self) -> None:
        w = _clean_vector(self.w_bar, "w_bar")
        x = _clean_vector(self.x_bar, "x_bar")
        if np.linalg.norm(w) == 0.0 or np.linalg.norm(x) == 0.0:
            raise ValueError("ground-truth factors must be nonzero")
        object.__setattr__(self, "w_bar", w)
        object.__setattr__(self, "x_bar", x)

    @property
    def magnitude(self) -> float:
        """``norm(w_bar x_bar^T)_F``, the size of the planted matrix."""
        return float(np.linalg.norm(self.w_bar) * np.linalg.norm(self.x_bar))

    @classmethod
    def balanced(cls, w: np.ndarray, x: np.ndarray) -> "GroundTruth":
        """Rescale an arbitrary nonzero pair so both factors share one norm."""
        w = _clean_vector(w, "w")
        x = _clean_vector(x, "x")
        nw = np.linalg.norm(w)
        nx = np.linalg.norm(x)
        if nw == 0.0 or nx == 0.0:
            raise ValueError("cannot balance a zero factor")
        target = math.sqrt(nw * nx)
        return cls(w_bar=w * (target / nw), x_bar=x * (target / nx))

    def pair(self) -> SignalPair:
        return SignalPair(w=self.w_bar, x=self.x_bar)


@dataclass(frozen=True)
class NoiseSpec:
    """Corruption model: which fraction of measurements fail, and how.

    ``kind="gaussian"`` shifts each failed measurement by an independent
    ``sigma``-scaled Gaussian offset, so the failed entries are inconsistent
    with the planted pair but carry no structure of their own.
    ``kind="implant"`` instead overwrites failed measurements with the
    measurements of a second signal pair (drawn at generation time when not
    supplied), so the corruption itself looks like a consistent signal.
    """

    p_fail: float
    kind: NoiseKind = "gaussian"
    sigma: float = 1.0
    implant: SignalPair | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_fail < 0.5:
            raise ValueError(f"p_fail must lie in [0, 1/2), got {self.p_fail}")
        if self.kind not in ("gaussian", "implant"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def gaussian(cls, p_fail: float, sigma: float = 1.0) -> "NoiseSpec":
        return cls(p_fail=p_fail, kind="gaussian", sigma=sigma)

    @classmethod
    def implanted(cls, p_fail: float, pair: SignalPair | None = None) -> "NoiseSpec":
        return cls(p_fail=p_fail, kind="implant", implant=pair)


@dataclass(frozen=True)
class ProblemInstance:
    """One generated recovery problem: operator, observations, and provenance."""

    op: MeasurementOperator
    y: np.ndarray
    truth: GroundTruth
    outlier_mask: np.ndarray
    nu: float
    seed: int

    def __post_init__(self) -> None:
        y = _clean_vector(self.y, "y")
        mask = np.ascontiguousarray(self.outlier_mask, dtype=bool)
        if y.size != self.op.m or mask.size != self.op.m:
            raise DimensionError("y and outlier_mask must have one entry per measurement")
        if self.truth.w_bar.size != self.op.d1 or self.truth.x_bar.size != self.op.d2:
            raise DimensionError("ground-truth dimensions do not match the operator")
        if not self.nu >= 1.0:
            raise ValueError(f"nu must be >= 1, got {self.nu}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "outlier_mask", mask)

    @property
    def m(self) -> int:
        return self.op.m

    @property
    def d1(self) -> int:
        return self.op.d1

    @property
    def d2(self) -> int:
        return self.op.d2

    @property
    def outlier_count(self) -> int:
        return int(self.outlier_mask.sum())


def corrupted_count(p_fail: float, m: int) -> int:
    """Number of corrupted measurements: p_fail * m rounded half-up."""
    return int(math.floor(p_fail * m + 0.5))


def _unit_sphere(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    while norm == 0.0:  # probability zero, but keep the contract airtight
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
    return v / norm


def partial_hadamard_left(m: int, d1: int) -> HadamardSignOperator:
    """Deterministic-left operator with orthogonal columns of norm sqrt(m).

    Rows are the first ``d1`` columns of a Hadamard matrix read off row by
    row: because only the low-order index bits reach those columns, the row
    patterns repeat with period equal to the block dimension (the largest
    power of two dividing m), so the operator is exactly the classical
    partial construction truncated to m rows, for any admissible m.  The
    construction is fully deterministic; the repeated rows are a genuine
    property of partial Hadamard measurements, not an artifact.
    """
    if m < 1:
        raise DimensionError(f"m must be positive, got {m}")
    block = m & (-m)  # largest power-of-two divisor
    if block < d1:
        raise DimensionError(
            f"m={m} admits Hadamard blocks of dimension at most {block}, "
            f"too small for d1={d1}; choose m with a power-of-two factor >= d1"
        )
    signs = np.ones((m // block, block))
    return HadamardSignOperator(sign_diagonals=signs, input_dim=d1, normalized=False)


def generate_instance(
    d1: int,
    d2: int,
    m: int,
    *,
    left: LeftModel = "gaussian",
    noise: NoiseSpec | None = None,
    seed: int = 0,
    magnitude: float = 1.0,
    nu: float = math.sqrt(2.0),
) -> ProblemInstance:
    """Draw a complete instance from a single integer seed.

    The random stream is consumed in a fixed order (ground truth, left
    operator, right operator, corrupted index set, corruption values), so the
    same seed always yields a bit-identical instance.

    Parameters
    ----------
    d1, d2, m:
        Factor dimensions and measurement count.
    left:
        ``"gaussian"`` draws both sides i.i.d. standard Gaussian;
        ``"hadamard"`` makes the left side a deterministic-column structured
        operator (see :func:`partial_hadamard_left`) with a Gaussian right.
    noise:
        Corruption model; defaults to no corruption.
    magnitude:
        Frobenius norm of the planted rank-one matrix; factors are balanced,
        each with norm ``sqrt(magnitude)``.
    nu:
        Scale-ambiguity slack carried by the instance for region radii and
        solution-set metrics.
    """
    if d1 < 1 or d2 < 1 or m < 1:
        raise DimensionError(f"dimensions must be positive, got d1={d1} d2={d2} m={m}")
    if not magnitude > 0.0:
        raise ValueError(f"magnitude must be positive, got {magnitude}")
    if noise is None:
        noise = NoiseSpec.gaussian(0.0)

    rng = np.random.default_rng(np.random.SeedSequence(seed))

    root = math.sqrt(magnitude)
    truth = GroundTruth(
        w_bar=root * _unit_sphere(rng, d1),
        x_bar=root * _unit_sphere(rng, d2),
    )

    if left == "gaussian":
        left_op: Union[DenseOperator, HadamardSignOperator] = DenseOperator(
            entries=rng.standard_normal((m, d1))
        )
    elif left == "hadamard":
        left_op = partial_hadamard_left(m, d1)
    else:
        raise ValueError(f"unknown left model {left!r}")
    right_op = DenseOperator(entries=rng.standard_normal((m, d2)))
    op = MeasurementOperator(left=left_op, right=right_op)

    n_bad = corrupted_count(noise.p_fail, m)
    mask = np.zeros(m, dtype=bool)
    if n_bad:
        mask[rng.choice(m, size=n_bad, replace=False)] = True

    y = op.bilinear_forward(truth.w_bar, truth.x_bar)
    if n_bad:
        if noise.kind == "gaussian":
            y[mask] += noise.sigma * rng.standard_normal(n_bad)
        else:
            pair = noise.implant
            if pair is None:
                pair = SignalPair(
                    w=root * _unit_sphere(rng, d1),
                    x=root * _unit_sphere(rng, d2),
                )
            if pair.d1 != d1 or pair.d2 != d2:
                raise DimensionError("implanted pair dimensions do not match the instance")
            y[mask] = op.bilinear_forward(pair.w, pair.x)[mask]

    return ProblemInstance(op=op, y=y, truth=truth, outlier_mask=mask, nu=nu, seed=seed)


def objective(inst: ProblemInstance, p: SignalPair) -> float:
    """Mean absolute residual (1/m) * sum_i |<l_i,w><r_i,x> - y_i|."""
    resid = inst.op.bilinear_forward(p.w, p.x) - inst.y
    return float(np.abs(resid).mean())


def objective_and_subgradient(inst: ProblemInstance, p: SignalPair) -> tuple[float, np.ndarray]:
    """Objective value and a stacked subgradient, sharing operator products.

    With s = sign(residual) (and sign(0) = 0) the returned vector is

        (1/m) [ L^T (s * (R x)) ; R^T (s * (L w)) ],

    computed with exactly four operator products: the two forward products
    feed both the value and the weighting of the two transpose products.
    """
    lw = inst.op.left.apply_forward(p.w)
    rx = inst.op.right.apply_forward(p.x)
    resid = lw * rx - inst.y
    sign = np.sign(resid)
    scale = 1.0 / inst.m
    grad_w = scale * inst.op.left.apply_transpose(sign * rx)
    grad_x = scale * inst.op.right.apply_transpose(sign * lw)
    return float(np.abs(resid).mean()), np.concatenate([grad_w, grad_x])


def subgradient(inst: ProblemInstance, p: SignalPair) -> np.ndarray:
    """Stacked subgradient of the objective at ``p`` (length d1 + d2)."""
    return objective_and_subgradient(inst, p)[1]


@dataclass(frozen=True)
class LinearizedResidual:
    """The Jacobian-style map of the objective linearized at a base pair.

    Row i is ``[ <x_base, r_i> l_i^T  |  <l_i, w_base> r_i^T ]`` acting on a
    stacked displacement from the base point.  Products are formed from the
    underlying operator sides, so structured sides stay structured.
    """

    left: Union[DenseOperator, HadamardSignOperator]
    right: Union[DenseOperator, HadamardSignOperator]
    left_weights: np.ndarray  # <l_i, w_base>, length m
    right_weights: np.ndarray  # <x_base, r_i>, length m

    def __post_init__(self) -> None:
        lw = _clean_vector(self.left_weights, "left_weights")
        rw = _clean_vector(self.right_weights, "right_weights")
        if lw.size != self.left.m or rw.size != self.right.m or self.left.m != self.right.m:
            raise DimensionError("weight lengths must equal the measurement count")
        object.__setattr__(self, "left_weights", lw)
        object.__setattr__(self, "right_weights", rw)

    @property
    def m(self) -> int:
        return self.left.m

    @property
    def d1(self) -> int:
        return self.left.input_dim

    @property
    def d2(self) -> int:
        return self.right.input_dim

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.d1 + self.d2)

    @property
    def is_dense(self) -> bool:
        return isinstance(self.left, DenseOperator) and isinstance(self.right, DenseOperator)

    def matvec(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.d1 + self.d2,):
            raise DimensionError(f"expected stacked vector of length {self.d1 + self.d2}")
        return self.right_weights * self.left.apply_forward(
            z[: self.d1]
        ) + self.left_weights * self.right.apply_forward(z[self.d1 :])

    def rmatvec(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.m,):
            raise DimensionError(f"expected residual vector of length {self.m}")
        return np.concatenate(
            [
                self.left.apply_transpose(self.right_weights * u),
                self.right.apply_transpose(self.left_weights * u),
            ]
        )

    def to_dense(self) -> np.ndarray:
        return np.hstack(
            [
                self.right_weights[:, None] * self.left.to_dense(),
                self.left_weights[:, None] * self.right.to_dense(),
            ]
        )


def linearized_residual_operator(
    inst: ProblemInstance, base: SignalPair
) -> tuple[LinearizedResidual, np.ndarray]:
    """Linearize the bilinear map at ``base``.

    Returns the displacement-to-residual map A and the offset vector
    ``y_tilde = y - <l_i, w_base><x_base, r_i>`` so that the locally linear
    model of the objective at base + displacement z is (1/m)||A z - y_tilde||_1.
    """
    if base.d1 != inst.d1 or base.d2 != inst.d2:
        raise DimensionError("base pair dimensions do not match the instance")
    lw = inst.op.left.apply_forward(base.w)
    rx = inst.op.right.apply_forward(base.x)
    amap = LinearizedResidual(
        left=inst.op.left, right=inst.op.right, left_weights=lw, right_weights=rx
    )
    return amap, inst.y - lw * rx


_LEFT_KINDS = {"dense": 0, "hadamard": 1}


def _pack_side(prefix: str, side: Union[DenseOperator, HadamardSignOperator], out: dict) -> None:
    if isinstance(side, DenseOperator):
        out[f"{prefix}_kind"] = np.int64(_LEFT_KINDS["dense"])
        out[f"{prefix}_entries"] = side.entries
    else:
        out[f"{prefix}_kind"] = np.int64(_LEFT_KINDS["hadamard"])
        out[f"{prefix}_signs"] = side.sign_diagonals
        out[f"{prefix}_input_dim"] = np.int64(side.input_dim)
        out[f"{prefix}_normalized"] = np.int64(int(side.normalized))


def _unpack_side(prefix: str, data) -> Union[DenseOperator, HadamardSignOperator]:
    kind = int(data[f"{prefix}_kind"])
    if kind == _LEFT_KINDS["dense"]:
        return DenseOperator(entries=data[f"{prefix}_entries"])
    if kind == _LEFT_KINDS["hadamard"]:
        return HadamardSignOperator(
            sign_diagonals=data[f"{prefix}_signs"],
            input_dim=int(data[f"{prefix}_input_dim"]),
            normalized=bool(int(data[f"{prefix}_normalized"])),
        )
    raise ValueError(f"unknown operator kind tag {kind}")


def save_instance(inst: ProblemInstance, path: str | Path) -> None:
    """Dump an instance to a .npz archive (no pickling involved)."""
    payload: dict = {
        "y": inst.y,
        "w_bar": inst.truth.w_bar,
        "x_bar": inst.truth.x_bar,
        "outlier_mask": inst.outlier_mask,
        "nu": np.float64(inst.nu),
        "seed": np.int64(inst.seed),
    }
    _pack_side("left", inst.op.left, payload)
    _pack_side("right", inst.op.right, payload)
    np.savez(path, **payload)


def load_instance(path: str | Path) -> ProblemInstance:
    """Inverse of :func:`save_instance`."""
    with np.load(path, allow_pickle=False) as data:
        op = MeasurementOperator(left=_unpack_side("left", data), right=_unpack_side("right", data))
        return ProblemInstance(
            op=op,
            y=data["y"],
            truth=GroundTruth(w_bar=data["w_bar"], x_bar=data["x_bar"]),
            outlier_mask=data["outlier_mask"],
            nu=float(data["nu"]),
            seed=int(data["seed"]),
        )
