"""Residual history shared by the iterative solvers."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class ResidualTrace:
    """Relative residual per iteration of an iterative solve.

    ``entries`` holds (iteration, relative_residual) pairs with strictly
    increasing iteration numbers starting at 0; with a zero initial guess
    the first value is 1.  ``iterations_to_tol`` is the first iteration at
    which the tolerance was met, or None.
    """

    entries: list[tuple[int, float]] = field(default_factory=list)
    converged: bool = False
    stagnated: bool = False
    iterations_to_tol: int | None = None

    def record(self, iteration: int, value: float) -> None:
        if self.entries and iteration < self.entries[-1][0]:
            raise ValueError("iterations must be non-decreasing")
        if self.entries and iteration == self.entries[-1][0]:
            self.entries[-1] = (iteration, float(value))
        else:
            self.entries.append((iteration, float(value)))

    @property
    def iterations(self) -> list[int]:
        return [it for it, _ in self.entries]

    @property
    def residuals(self) -> list[float]:
        return [r for _, r in self.entries]

    def final_residual(self) -> float:
        return self.entries[-1][1]
