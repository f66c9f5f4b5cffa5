"""Time-indexed drift matrices D_n = I - 2*A_n of the linear forward process."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = ["DriftGrid", "MODES", "LAMBDA_MIN_DEFAULT"]

MODES = ("diag-const", "diag-var", "full-const", "full-var")
LAMBDA_MIN_DEFAULT = 1e-3


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass
class DriftGrid:
    """Per-cell matrices A_n (n = 0..N-1) with D_n = I - 2*A_n kept positive definite.

    Diagonal modes store full matrices but guarantee exact zeros off the
    diagonal; "-const" modes keep one shared value replicated across cells.
    ``lambda_min`` is the eigenvalue floor for D enforced by :meth:`project`.
    """

    n_cells: int
    dim: int
    mode: str = "diag-var"
    lambda_min: float = LAMBDA_MIN_DEFAULT
    a: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
        if self.lambda_min <= 0.0:
            raise DomainError("lambda_min must be positive")
        if self.a is None:
            self.a = np.zeros((self.n_cells, self.dim, self.dim))
        else:
            self.a = np.array(self.a, dtype=float)
            if self.a.shape != (self.n_cells, self.dim, self.dim):
                raise DomainError(
                    f"a must have shape {(self.n_cells, self.dim, self.dim)}"
                )
        self._validate_structure()

    # -- structure -----------------------------------------------------------

    @property
    def is_diagonal(self) -> bool:
        return self.mode.startswith("diag")

    @property
    def is_time_invariant(self) -> bool:
        return self.mode.endswith("const")

    def _validate_structure(self):
        if self.is_diagonal:
            mask = ~np.eye(self.dim, dtype=bool)
            if np.any(self.a[:, mask] != 0.0):
                raise DomainError("diagonal mode requires exactly zero off-diagonal A")
        if self.is_time_invariant and self.n_cells > 1:
            if not np.all(self.a == self.a[0]):
                raise DomainError("time-invariant mode requires identical cells")

    # -- accessors -----------------------------------------------------------

    def a_at(self, n: int) -> np.ndarray:
        return self.a[self._check_cell(n)]

    def d_at(self, n: int) -> np.ndarray:
        return np.eye(self.dim) - 2.0 * self.a_at(n)

    def d_all(self) -> np.ndarray:
        return np.eye(self.dim)[None] - 2.0 * self.a

    def _check_cell(self, n: int) -> int:
        n = int(n)
        if not 0 <= n < self.n_cells:
            raise DomainError(f"cell index {n} outside 0..{self.n_cells - 1}")
        return n

    def cell_for_time(self, t: float, h: float) -> int:
        """Cell containing time t under the piecewise-constant convention."""
        n = int(np.floor(t / h + 1e-12))
        return min(max(n, 0), self.n_cells - 1)

    # -- mutation ------------------------------------------------------------

    def set_a(self, n: int, value: np.ndarray):
        value = np.asarray(value, dtype=float)
        if self.is_diagonal:
            value = np.diag(np.diagonal(value)) if value.ndim == 2 else np.diag(value)
        if self.is_time_invariant:
            self.a[:] = value
        else:
            self.a[self._check_cell(n)] = value
        return self

    def set_all(self, value: np.ndarray):
        value = np.asarray(value, dtype=float)
        if self.is_diagonal and value.ndim == 1:
            value = np.diag(value)
        self.a[:] = value
        return self

    @staticmethod
    def from_d(d_values: np.ndarray, mode: str = "diag-var", lambda_min: float = LAMBDA_MIN_DEFAULT) -> "DriftGrid":
        """Build from D values; A = (I - D)/2 round-trips exactly."""
        d_values = np.asarray(d_values, dtype=float)
        n_cells, dim = d_values.shape[0], d_values.shape[1]
        a = 0.5 * (np.eye(dim)[None] - d_values)
        return DriftGrid(n_cells=n_cells, dim=dim, mode=mode, lambda_min=lambda_min, a=a)

    # -- positive definiteness -----------------------------------------------

    def min_d_eigenvalue(self) -> float:
        """Smallest eigenvalue of the symmetric part of any D_n."""
        vals = [np.linalg.eigvalsh(_sym(self.d_at(n))).min() for n in range(self.n_cells)]
        return float(min(vals))

    def project(self):
        """Clamp every D_n onto the eigenvalue floor (in place).

        Diagonal modes clamp entries; full modes shift by the symmetric-part
        deficit, which preserves the skew component.
        """
        eye = np.eye(self.dim)
        for n in range(self.n_cells):
            d = eye - 2.0 * self.a[n]
            if self.is_diagonal:
                diag = np.clip(np.diagonal(d), self.lambda_min, None)
                d = np.diag(diag)
            else:
                lo = np.linalg.eigvalsh(_sym(d)).min()
                if lo < self.lambda_min:
                    d = d + (self.lambda_min - lo) * eye
            self.a[n] = 0.5 * (eye - d)
            if self.is_time_invariant:
                self.a[:] = self.a[n]
                break
        return self

    def copy(self) -> "DriftGrid":
        return DriftGrid(
            n_cells=self.n_cells,
            dim=self.dim,
            mode=self.mode,
            lambda_min=self.lambda_min,
            a=self.a.copy(),
        )
