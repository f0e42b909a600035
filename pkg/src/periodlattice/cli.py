"""Command line driver: ``periodlattice run config.json [--seed N] [--verbose]``.

Exit codes: 0 when every verdict passes (skipped stages do not fail a run),
1 when some verdict fails, 2 on invalid configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import latalg, lattice, maslov
from .exceptions import ConfigInvalid, IoFailure, PeriodLatticeError
from .flow import Tolerances
from .systems import builtin_system

SCHEMA_VERSION = "1.0"
log = logging.getLogger("periodlattice")

_MODULE_OF = {
    "periods": "lattice",
    "refine": "lattice",
    "monodromy": "lattice",
    "maslov": "maslov",
    "rho_invariance": "latalg",
    "kernel_chain": "latalg",
    "section": "latalg",
    "s1_action": "latalg",
    "mapping_torus": "latalg",
}

_LOOP_JOBS = {"monodromy", "mapping-torus-check", "full-verify"}


def load_schema(name: str) -> dict:
    text = resources.files("periodlattice").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _config_schema() -> dict:
    schema = load_schema("config")
    loop = load_schema("loop")
    loop.pop("$id", None)
    loop.pop("$schema", None)
    schema["properties"]["loop"] = loop
    return schema


def validate_config(config: dict) -> None:
    try:
        jsonschema.validate(config, _config_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigInvalid(f"config: {exc.message} at {list(exc.absolute_path)}") from None
    job = config["job"]
    if job in _LOOP_JOBS and "loop" not in config and "circle" not in config:
        raise ConfigInvalid(f"job {job!r} needs a 'loop' or 'circle'")
    if "loop" in config and "circle" in config:
        raise ConfigInvalid("give either 'loop' or 'circle', not both")
    if job == "refine" and "hints" not in config:
        raise ConfigInvalid("job 'refine' needs 'hints'")
    if job not in _LOOP_JOBS and not any(key in config for key in ("value", "point", "loop", "circle")):
        raise ConfigInvalid(f"job {job!r} needs a 'value' or 'point'")


def validate_report(report: dict) -> None:
    jsonschema.validate(report, load_schema("report"))


class _Job:
    """State shared by the stages of one run."""

    def __init__(self, config: dict, base_dir: Path):
        self.config = config
        self.base_dir = base_dir
        self.opts = config.get("options", {})
        self.tol = Tolerances(**config.get("tolerances", {}))
        self.rng = np.random.default_rng(config.get("seed", 0))
        try:
            self.system = builtin_system(config["system"]["name"], config["system"].get("params", {}))
        except KeyError as exc:
            raise ConfigInvalid(f"unknown system {exc}") from None
        self.results: dict = {}
        self.verdicts: dict = {}
        self.files: list = []
        self._loop = None
        self._basis = None
        self._mono = None
        self._mv = None

    # inputs -------------------------------------------------------------

    def loop(self) -> Optional[lattice.LoopPath]:
        if self._loop is None:
            if "loop" in self.config:
                self._loop = lattice.LoopPath.from_dict(self.config["loop"])
            elif "circle" in self.config:
                c = self.config["circle"]
                self._loop = lattice.circle_loop(
                    c["center"], c["radius"], c.get("samples", 64), c.get("start_angle", 0.0), c.get("turns", 1)
                )
        return self._loop

    def anchor(self) -> np.ndarray:
        if "point" in self.config:
            return np.asarray(self.config["point"], dtype=float)
        if "value" in self.config:
            value = self.config["value"]
        else:
            value = self.loop().samples[0]
        return self.system.point_on_fiber(np.asarray(value, dtype=float))

    def basis(self) -> lattice.LatticeBasis:
        if self._basis is None:
            self._basis = lattice.detect_lattice_basis(
                self.system,
                self.anchor(),
                hints=self.config.get("hints"),
                tol=self.tol,
                t_max=self.opts.get("t_max", 15.0),
                scan_step=self.opts.get("scan_step", 0.05),
            )
        return self._basis

    def record(self, stage: str, verdict: str, result: dict) -> None:
        self.verdicts[stage] = verdict
        self.results[stage] = result

    # stages ---------------------------------------------------------------

    def periods(self, stage: str = "periods") -> None:
        lb = self.basis()
        closure = lattice.check_closure(self.system, lb, self.rng, tol=self.tol)
        out = lb.to_dict()
        out["determinant"] = float(np.linalg.det(lb.basis))
        out["closure_residual"] = closure
        ok = bool(np.all(lb.residuals < self.tol.newton_tol) and closure < 10 * self.tol.newton_tol)
        self.record(stage, "pass" if ok else "fail", out)

    def monodromy(self) -> None:
        loop = self.loop()
        lb = self.basis()
        self._mono = lattice.monodromy(self.system, loop, lb, self.tol)
        out = self._mono.to_dict()
        inv = latalg.gl2z_conjugacy_invariant(self._mono.entries) if lb.n == 2 else None
        if inv is not None:
            out["conjugacy_invariant"] = inv
        expected = self.system.prescribed_monodromy
        ok = out["determinant"] == 1 and self._mono.pre_round_residual < 0.01
        if expected is not None and self.system.critical_values:
            turns = _winding(loop, self.system.critical_values[0])
            P = np.rint(np.linalg.matrix_power(np.array(expected, dtype=float), turns)).astype(int)
            out["prescribed"] = P.tolist()
            ok = ok and out["entries"] == out["prescribed"]
        self.record("monodromy", "pass" if ok else "fail", out)
        self._emit_trajectory(self._mono.trajectory)

    def maslov(self) -> None:
        if not self.system.hamiltonian or self.system.dim_ambient != 2 * self.system.n:
            self.record("maslov", "skipped", {"reason": f"{self.system.name} is not Hamiltonian on R^2n"})
            return
        self._mv = maslov.maslov_vector(
            self.system, self.basis(), samples=self.opts.get("maslov_samples", 64), tol=self.tol
        )
        out = self._mv.to_dict()
        out["gcd"] = int(np.gcd.reduce(self._mv.indices))
        self.record("maslov", "pass", out)
        self._emit_phases(self._mv)

    def rho(self) -> Optional[latalg.RhoFunctional]:
        if "rho" in self.opts:
            return latalg.RhoFunctional(np.array(self.opts["rho"], dtype=object), self.basis())
        if self._mv is not None:
            return latalg.RhoFunctional.from_maslov(self._mv)
        return None

    def rho_invariance(self, rho) -> None:
        rep = latalg.verify_rho_invariance(rho, self._mono)
        out = rep.to_dict()
        out["rho"] = [[int(v) for v in row] for row in rho.rows]
        self.record("rho_invariance", out.pop("verdict"), out)

    def chain(self, rho) -> latalg.SublatticeChain:
        ch = latalg.kernel_chain(rho)
        out = ch.to_dict()
        ok = all(abs(c) == 1 for c in ch.certificates) and all(
            latalg.saturation_index(K) == 1 for K in ch.kernels
        )
        self.record("kernel_chain", "pass" if ok else "fail", out)
        return ch

    def section(self, chain: Optional[latalg.SublatticeChain]) -> Optional[latalg.CircleActionSection]:
        if "section" in self.opts:
            raw = self.opts["section"]
        elif chain is not None and chain.kernels and chain.kernels[-1].shape[1] >= 1:
            raw = chain.kernels[-1][:, 0]
        else:
            return None
        sec = latalg.primitive_section(raw)
        self.record("section", "pass", {"input": [int(v) for v in raw], **sec.to_dict()})
        return sec

    def s1_action(self, sec: Optional[latalg.CircleActionSection]) -> None:
        if sec is None:
            self.record("s1_action", "skipped", {"reason": "no section available"})
            return
        fibers = []
        count = self.opts.get("fibers", 5)
        traj = self._mono.trajectory if self._mono is not None else None
        if traj is not None and count > 1:
            idx = np.linspace(0, len(traj.bases) - 1, count, endpoint=False).round().astype(int)[1:]
            fibers = [traj.bases[i] for i in idx]
        rep = latalg.free_circle_action(
            self.system,
            self.basis(),
            sec,
            self.rng,
            closure_tol=self.opts.get("closure_tol", 1e-8),
            fibers=fibers,
            points_per_fiber=self.opts.get("points_per_fiber", 10),
            tol=self.tol,
            strict=False,
        )
        out = rep.to_dict()
        out["section"] = sec.to_dict()
        self.record("s1_action", out.pop("verdict"), out)

    def mapping_torus(self) -> None:
        traj = self._mono.trajectory
        fresh = lattice.detect_lattice_basis(
            self.system, traj.bases[-1].anchor, tol=self.tol,
            t_max=self.opts.get("t_max", 15.0), scan_step=self.opts.get("scan_step", 0.05),
        )
        rep = latalg.mapping_torus_check(
            self._mono,
            traj,
            self.opts.get("torus_samples", 100),
            self.rng,
            tol=self.opts.get("identification_tol", 1e-6),
            fresh=fresh,
            strict=False,
        )
        out = rep.to_dict()
        self.record("mapping_torus", out.pop("verdict"), out)

    # plot data --------------------------------------------------------------

    def _csv_dir(self) -> Optional[Path]:
        out = self.config.get("output", {})
        if "csv_dir" not in out:
            return None
        return self.base_dir / out["csv_dir"]

    def _emit_trajectory(self, traj) -> None:
        target = self._csv_dir()
        if target is None:
            return
        k, n = self.system.k, self.system.n
        header = ["s"] + [f"c{i + 1}" for i in range(k)]
        header += [f"T{j + 1}_{i + 1}" for j in range(n) for i in range(n)]
        rows = [
            [s] + list(b.value) + list(b.basis.T.ravel())
            for s, b in zip(traj.s, traj.bases)
        ]
        self.files.append(emit_csv(target / "trajectory.csv", header, rows))

    def _emit_phases(self, mv) -> None:
        target = self._csv_dir()
        if target is None:
            return
        for j, cyc in enumerate(mv.cycles):
            rows = list(zip(cyc.s, cyc.phase))
            self.files.append(emit_csv(target / f"maslov_cycle{j + 1}.csv", ["s", "phase"], rows))


def _winding(loop: lattice.LoopPath, center) -> int:
    """Winding number of a planar loop around ``center`` (0 if not planar)."""
    pts = loop.samples - np.asarray(center, dtype=float)
    if pts.shape[1] != 2:
        return 0
    ang = np.unwrap(np.arctan2(pts[:, 1], pts[:, 0]))
    return int(np.rint((ang[-1] - ang[0]) / (2 * np.pi)))


def emit_csv(path: Path, header, rows) -> str:
    """Write rows with 17 significant digits; returns the path as a string."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([format(float(v), ".17g") for v in row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path.name


def run_job(config: dict, base_dir: Optional[Path] = None) -> dict:
    """Run one configured job and return the report (also written if configured)."""
    validate_config(config)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    job = _Job(config, base_dir)
    kind = config["job"]
    stage = "setup"
    try:
        if kind in ("periods", "refine"):
            stage = kind
            job.periods(kind)
        if kind in ("monodromy", "mapping-torus-check", "full-verify"):
            stage = "monodromy"
            job.monodromy()
        if kind in ("maslov", "full-verify"):
            stage = "maslov"
            job.maslov()
        if kind == "mapping-torus-check":
            stage = "mapping_torus"
            job.mapping_torus()
        if kind == "s1-action":
            stage = "section"
            if job.loop() is not None:
                job.monodromy()
            if "section" not in job.opts and job.system.hamiltonian:
                job.maslov()
            rho = job.rho()
            chain = latalg.kernel_chain(rho) if rho is not None and "section" not in job.opts else None
            stage = "s1_action"
            job.s1_action(job.section(chain))
        if kind == "full-verify":
            stage = "periods"
            job.periods()
            rho = job.rho()
            if rho is None:
                for name in ("rho_invariance", "kernel_chain"):
                    job.record(name, "skipped", {"reason": "no functional (non-Hamiltonian, none configured)"})
                chain = None
            else:
                stage = "rho_invariance"
                job.rho_invariance(rho)
                stage = "kernel_chain"
                chain = job.chain(rho)
            stage = "s1_action"
            job.s1_action(job.section(chain))
            stage = "mapping_torus"
            job.mapping_torus()
    except PeriodLatticeError as exc:
        module = _MODULE_OF.get(stage, "cli")
        raise type(exc)(f"[{module}:{stage}] {exc}") from exc

    echo = copy.deepcopy(config)
    echo["tolerances"] = job.tol.to_dict()
    echo["seed"] = int(config.get("seed", 0))
    overall = "fail" if any(v == "fail" for v in job.verdicts.values()) else "pass"
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": echo,
        "results": job.results,
        "verdicts": job.verdicts,
        "overall": overall,
        "diagnostics": {"tolerances": job.tol.to_dict(), "seed": echo["seed"], "files": job.files},
    }
    report = json.loads(json.dumps(report, default=_jsonable))
    validate_report(report)
    target = config.get("output", {}).get("report")
    if target is not None:
        path = base_dir / target
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(dumps_report(report))
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc
    return report


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="periodlattice", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the job described by a JSON config")
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--verbose", "-v", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if not isinstance(config, dict):
            print("error: config must be a JSON object", file=sys.stderr)
            return 2
        config["seed"] = args.seed
    start = time.perf_counter()
    try:
        report = run_job(config, base_dir=args.config.resolve().parent)
    except PeriodLatticeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    log.info("job %s finished in %.2f s", config["job"], time.perf_counter() - start)
    for stage, verdict in report["verdicts"].items():
        log.info("%-16s %s", stage, verdict)
    if "report" not in config.get("output", {}):
        sys.stdout.write(dumps_report(report))
    return 0 if report["overall"] == "pass" else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
