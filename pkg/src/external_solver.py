"""
External solver adapter - hands open-path sub-problems to an LKH-style binary.

The sub-problem is written as a closed TSPLIB instance whose source-target edge
is fixed; the returned tour is cut at that edge. Any failure falls back to
farthest insertion.
"""

from pathlib import Path
from typing import Optional
import logging
import shlex
import subprocess
import tempfile
import time

from .core import (
    InstanceFormatError,
    OpenPath,
    PathLike,
    TourValidationError,
    TspInstance,
    cut_cycle,
    validate_path,
)
from .heuristics import farthest_insertion_open
from .instance_io import read_tour
from .templates import render_solver_params, render_tsplib

logger = logging.getLogger(__name__)

# Extra seconds granted to the process on top of the solver's own time limit
PROCESS_GRACE_S = 5.0


class ExternalSolverError(RuntimeError):
    """Raised when the external solver fails or returns an unusable tour."""


class ExternalSolverAdapter:
    """
    Runs an external command per sub-problem.

    The command template may use the placeholders {problem}, {params},
    {output} and {time_limit}; e.g. "LKH {params}".
    """

    def __init__(
        self,
        command: Optional[str],
        time_limit: float = 10.0,
        coordinate_scale: float = 1_000_000.0,
        telemetry=None,
    ):
        self.command = command
        self.time_limit = time_limit
        self.coordinate_scale = coordinate_scale
        self.telemetry = telemetry
        self.calls = 0
        self.fallbacks = 0

    def solve(self, sub: PathLike, instance: TspInstance) -> OpenPath:
        """
        Solve one sub-problem, falling back to farthest insertion on any failure.

        Returns:
            Valid source -> target OpenPath over sub.nodes
        """
        nodes = [int(v) for v in sub.nodes]
        if len(nodes) <= 3:
            return farthest_insertion_open(sub, instance)

        self.calls += 1
        start_time = time.time()
        error: Optional[Exception] = None
        try:
            path = self._run(sub, instance)
            return path
        except (ExternalSolverError, OSError, subprocess.TimeoutExpired, ValueError) as e:
            error = e
            self.fallbacks += 1
            logger.warning(
                f"External solver failed on {len(nodes)} nodes ({type(e).__name__}: {e}); "
                f"using farthest insertion"
            )
            return farthest_insertion_open(sub, instance)
        finally:
            if self.telemetry:
                self.telemetry.log_external_solver(
                    nodes=len(nodes),
                    success=error is None,
                    duration_ms=(time.time() - start_time) * 1000,
                    error=error,
                )

    def _run(self, sub: PathLike, instance: TspInstance) -> OpenPath:
        if not self.command:
            raise ExternalSolverError("no external solver command configured")

        nodes = [int(v) for v in sub.nodes]
        source_local = nodes.index(int(sub.source))
        target_local = nodes.index(int(sub.target))
        coords = instance.nodes[nodes] * self.coordinate_scale

        with tempfile.TemporaryDirectory(prefix="hiertsp_ext_") as tmp:
            workdir = Path(tmp)
            problem = workdir / "problem.tsp"
            params = workdir / "problem.par"
            output = workdir / "problem.tour"

            problem.write_text(
                render_tsplib(
                    name="subproblem",
                    nodes=coords.tolist(),
                    comment=f"open path {source_local + 1} -> {target_local + 1}",
                    fixed_edges=[(source_local + 1, target_local + 1)],
                )
            )
            params.write_text(
                render_solver_params(str(problem), str(output), self.time_limit)
            )

            try:
                command = self.command.format(
                    problem=problem,
                    params=params,
                    output=output,
                    time_limit=self.time_limit,
                )
            except (KeyError, IndexError, ValueError) as e:
                raise ExternalSolverError(
                    f"bad command template {self.command!r}: {type(e).__name__}: {e}"
                ) from e
            argv = shlex.split(command)
            logger.debug(f"Running external solver: {argv}")
            completed = subprocess.run(
                argv,
                capture_output=True,
                text=True,
                timeout=self.time_limit + PROCESS_GRACE_S,
                check=False,
            )
            if completed.returncode != 0:
                raise ExternalSolverError(
                    f"solver exited with {completed.returncode}: {completed.stderr.strip()[:200]}"
                )
            if not output.exists():
                raise ExternalSolverError("solver wrote no tour file")

            try:
                tour, _ = read_tour(output.read_text())
            except InstanceFormatError as e:
                raise ExternalSolverError(f"unreadable tour file: {e}") from e

        local = [int(v) for v in tour.order]
        if sorted(local) != list(range(len(nodes))):
            raise TourValidationError("external tour is not a permutation of the sub-problem")

        path_local = cut_cycle(local, source_local, target_local)
        path = OpenPath(tuple(nodes[i] for i in path_local), int(sub.source), int(sub.target))
        validate_path(instance, path)
        return path
