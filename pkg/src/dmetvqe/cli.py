"""Command-line pipeline runner: single configurations, bond-distance
sweeps, and history refinement.

Output contract: result rows are CSV with columns
distance,method,energy,error_vs_fci,seed,config_hash -- wall time is printed
to the console but kept out of the file so reruns are byte-identical.
Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import os
import re
import sys
import time

import numpy as np

from . import circuits, dmet, integrals, operators, oracle, refine, simulator, vqe

RESULT_COLUMNS = "distance,method,energy,error_vs_fci,seed,config_hash"


class UsageError(ValueError):
    pass


def _parse_fragments(text):
    try:
        return [[int(t) for t in chunk.split(",") if t.strip() != ""]
                for chunk in text.split(";") if chunk.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad --fragments value {text!r}: {exc}") from exc


def _parse_bath_count(value):
    """None, an int, or a semicolon list of per-fragment counts."""
    if value is None or isinstance(value, int):
        return value
    text = str(value).strip()
    if not text:
        return None
    try:
        if ";" in text:
            return [int(t) for t in text.split(";") if t.strip() != ""]
        return int(text)
    except ValueError as exc:
        raise UsageError(f"bad --bath-count value {value!r}: {exc}") from exc


def _parse_shots(text):
    if text in ("exact", None):
        return None
    try:
        shots = int(text)
    except ValueError as exc:
        raise UsageError(f"--shots expects an integer or 'exact', got {text!r}") from exc
    if shots <= 0:
        raise UsageError("--shots must be positive")
    return shots


def _config_hash(items):
    canon = ";".join(f"{k}={v}" for k, v in sorted(items.items()) if k != "out")
    return hashlib.sha1(canon.encode()).hexdigest()[:12]


def _load_config_file(path):
    values = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#")[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _fixture_path(root, molecule, distance):
    label = f"{distance:.2f}" if molecule != "h2" else f"{distance:.3f}"
    return os.path.join(root, molecule, f"d{label}.fcidump")


def _fci_energy(ints):
    h = operators.jordan_wigner(ints)
    return oracle.exact_ground_energy(h, n_electrons=ints.n_electrons).ground_energy


def _molecular_qubit_problem(ints):
    """Whole-molecule qubit Hamiltonian in the canonical orbital basis."""
    mf = integrals.run_rhf(ints)
    cmo = mf.orbital_coeffs
    h_mo = cmo.T @ ints.h1 @ cmo
    g_mo = np.einsum("pi,qj,rk,sl,pqrs->ijkl", cmo, cmo, cmo, cmo, ints.h2,
                     optimize=True)
    mints = integrals.IntegralSet(ints.n_orbitals, ints.n_electrons,
                                  h_mo, g_mo, ints.e_core)
    h_q = operators.jordan_wigner(mints)
    tmap = operators.find_z2_symmetries(h_q, n_electrons=ints.n_electrons)
    h_t = operators.taper(h_q, tmap)
    ansatz = circuits.build_uccsd(ints.n_orbitals, ints.n_electrons, tapering=tmap)
    return h_q, tmap, h_t, ansatz


def _molecular_vqe(ints, shots, noise, seed, use_refine, nu, lam, c_thresh,
                   spsa_cfg):
    """Whole-molecule VQE in the canonical orbital basis, tapered."""
    _, tmap, h_t, ansatz = _molecular_qubit_problem(ints)
    exact_obj = None
    if shots in (None, "exact") and noise is None:
        reg_bits, gens, _ = circuits.uccsd_generators(
            ints.n_orbitals, ints.n_electrons, tapering=tmap)
        exact_obj = vqe.ExactAnsatzObjective(h_t, gens, reg_bits)
    result = vqe.run_vqe(h_t, ansatz, shots=shots, noise=noise, cfg=spsa_cfg,
                         seed=seed, exact_objective=exact_obj)
    theta = result.theta
    if use_refine and ansatz.parameter_count > 0:
        cfg = refine.RefinementConfig(c=c_thresh, seed=seed)
        theta = refine.refine_parameters(result.history, nu=nu, lam=lam, cfg=cfg)
    bound = ansatz.bind(theta)
    energy = simulator.estimate_energy(bound, h_t, shots=shots, noise=noise,
                                       seed=seed + 7919)
    return energy, result.history


def parse_method(label):
    """Decode a sweep method token into pipeline options.

    Grammar: base[:bathK][+nlrdm][+refine] with base one of
    vqe | dmet-vqe | dmet-exact; bathK is bath0/bath1/bath2/...; "bathauto"
    (the default) scores against the automatic threshold.
    """
    parts = label.split("+")
    head = parts[0]
    mods = parts[1:]
    if ":" in head:
        base, bath = head.split(":", 1)
        if not bath.startswith("bath"):
            raise UsageError(f"bad method token {label!r}")
        bath_count = None if bath == "bathauto" else int(bath[4:])
    else:
        base, bath_count = head, None
    if base not in ("vqe", "dmet-vqe", "dmet-exact"):
        raise UsageError(f"unknown pipeline {base!r} in method {label!r}")
    opts = {"pipeline": base, "bath_count": bath_count,
            "rdm_backend": "noisy", "refine": False}
    for mod in mods:
        if mod == "nlrdm":
            opts["rdm_backend"] = "noiseless"
        elif mod == "refine" or mod == "pr":
            opts["refine"] = True
        else:
            raise UsageError(f"unknown method modifier {mod!r} in {label!r}")
    return opts


def execute_run(fcidump, pipeline, fragments, bath_count, noise_spec, shots,
                seed, rdm_backend, use_refine, nu, lam, c_thresh, max_cycles,
                distance=None, spsa_iterations=None, history_out=None,
                cycles_out=None):
    """One pipeline execution; returns the CSV row dict."""
    ints = integrals.load_fcidump(fcidump)
    noise = simulator.resolve_noise(noise_spec)
    shots_v = _parse_shots(shots) if isinstance(shots, str) else shots
    e_fci = _fci_energy(ints)
    spsa_cfg = None
    if spsa_iterations:
        spsa_cfg = vqe.SpsaConfig(iterations=spsa_iterations, seed=seed)

    if pipeline == "vqe":
        energy, history = _molecular_vqe(ints, shots_v, noise, seed, use_refine,
                                         nu, lam, c_thresh, spsa_cfg)
        if history_out:
            with open(history_out, "w") as fh:
                fh.write(history.to_csv())
    elif pipeline in ("dmet-vqe", "dmet-exact"):
        frag_lists = fragments or [list(range(ints.n_orbitals))]
        config = dmet.DmetConfig(
            fragments=frag_lists,
            bath_count=_parse_bath_count(bath_count),
            solver="oracle" if pipeline == "dmet-exact" else "vqe",
            shots=shots_v,
            noise=noise,
            rdm_backend=rdm_backend if noise is not None else "noiseless",
            refine=use_refine,
            refine_nu=nu,
            refine_lambda=lam,
            refine_c=c_thresh,
            max_cycles=max_cycles,
            seed=seed,
            spsa=spsa_cfg,
        )
        result = dmet.run_dmet(ints, config)
        energy = result.energy
        if cycles_out:
            with open(cycles_out, "w") as fh:
                fh.write(result.cycles_csv())
        if result.warning:
            print(f"warning: {result.warning}", file=sys.stderr)
    else:
        raise UsageError(f"unknown pipeline {pipeline!r}")

    if distance is None:
        match = re.search(r"d([0-9.]+)\.fcidump$", str(fcidump))
        distance = match.group(1) if match else ""
    return {
        "distance": distance,
        "energy": energy,
        "error_vs_fci": abs(energy - e_fci),
        "seed": seed,
    }


def _write_rows(path, rows):
    lines = [RESULT_COLUMNS]
    for r in rows:
        lines.append(f"{r['distance']},{r['method']},{r['energy']!r},"
                     f"{r['error_vs_fci']!r},{r['seed']},{r['config_hash']}")
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def cmd_run(args):
    opts = {"pipeline": args.pipeline, "bath_count": args.bath_count,
            "rdm_backend": args.rdm_backend, "refine": args.refine}
    if args.refine and args.pipeline == "dmet-exact":
        raise UsageError("--refine requires a VQE pipeline with a history")
    config_items = {
        "fcidump": args.fcidump, "pipeline": args.pipeline,
        "fragments": args.fragments or "", "bath_count": args.bath_count,
        "noise": args.noise, "shots": args.shots, "seed": args.seed,
        "rdm_backend": args.rdm_backend, "refine": args.refine,
        "nu": args.nu, "lambda": args.lam, "c": args.c,
        "max_dmet_cycles": args.max_dmet_cycles,
    }
    t0 = time.perf_counter()
    row = execute_run(
        args.fcidump, args.pipeline, _parse_fragments(args.fragments) if args.fragments else None,
        args.bath_count, args.noise, args.shots, args.seed, args.rdm_backend,
        args.refine, args.nu, args.lam, args.c, args.max_dmet_cycles,
        distance=args.distance, spsa_iterations=args.spsa_iterations,
        history_out=args.history_out, cycles_out=args.cycles_out)
    wall = time.perf_counter() - t0
    row["method"] = _method_label(opts)
    row["config_hash"] = _config_hash(config_items)
    text = _write_rows(args.out, [row])
    print(text, end="")
    print(f"# wall_time_s={wall:.3f}", file=sys.stderr)
    return 0


def _method_label(opts):
    label = opts["pipeline"]
    if opts["bath_count"] is not None:
        label += f":bath{opts['bath_count']}"
    if opts.get("rdm_backend") == "noiseless" and opts["pipeline"] == "dmet-vqe":
        label += "+nlrdm"
    if opts.get("refine"):
        label += "+refine"
    return label


def cmd_sweep(args):
    distances = [float(t) for t in args.distances.split(",") if t.strip()]
    methods = [t.strip() for t in args.methods.split(",") if t.strip()]
    jobs = []
    for d in distances:
        path = _fixture_path(args.fixtures, args.molecule, d)
        if not os.path.exists(path):
            print(f"error: missing fixture {path}", file=sys.stderr)
            return 1
        for label in methods:
            jobs.append((d, label, path))

    def run_one(job):
        d, label, path = job
        opts = parse_method(label)
        config_items = {
            "fcidump": path, "method": label, "fragments": args.fragments or "",
            "noise": args.noise, "shots": args.shots, "seed": args.seed,
            "nu": args.nu, "lambda": args.lam, "c": args.c,
            "max_dmet_cycles": args.max_dmet_cycles,
        }
        row = execute_run(
            path, opts["pipeline"],
            _parse_fragments(args.fragments) if args.fragments else None,
            opts["bath_count"], args.noise, args.shots, args.seed,
            opts["rdm_backend"], opts["refine"], args.nu, args.lam, args.c,
            args.max_dmet_cycles, distance=d,
            spsa_iterations=args.spsa_iterations)
        row["method"] = label
        row["config_hash"] = _config_hash(config_items)
        return (d, label), row

    results = {}
    failures = []
    if args.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
            for key, row in pool.map(run_one, jobs):
                results[key] = row
    else:
        for job in jobs:
            try:
                key, row = run_one(job)
                results[key] = row
            except Exception as exc:  # per-row error marker
                failures.append((job, exc))
    ordered = [results[(d, m)] for d in distances for m in methods
               if (d, m) in results]
    text = _write_rows(args.out, ordered)
    print(text, end="")
    if failures:
        for job, exc in failures:
            print(f"error: {job[0]}/{job[1]}: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_refine(args):
    with open(args.history) as fh:
        history = vqe.OptHistory.from_csv(fh.read())
    lam = args.lam
    if args.select_lambda:
        grid = [float(t) for t in args.lambda_grid.split(",") if t.strip()]
        if args.select_lambda == "sinefit":
            lam = refine.select_regularizer_sinefit(history, grid, seed=args.seed,
                                                    nu=args.nu)
        else:
            raise UsageError("re-evaluation selection needs a live objective; "
                             "use sinefit for history-only refinement")
    cfg = refine.RefinementConfig(c=args.c, seed=args.seed)
    theta, model = refine.refine_parameters(history, nu=args.nu, lam=lam,
                                            cfg=cfg, return_model=True)
    mu, sigma = model.posterior(theta)
    cols = ",".join(f"theta_{i}" for i in range(len(theta)))
    comps = ",".join(f"{float(v)!r}" for v in theta)
    text = f"lambda,mu_n,sigma_n,{cols}\n{lam!r},{mu!r},{sigma!r},{comps}\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_dump(args):
    ints = integrals.load_fcidump(args.fcidump)
    if args.fragments:
        frags = _parse_fragments(args.fragments)
        mf = integrals.run_rhf(ints)
        spec = dmet.FragmentSpec(frags[args.fragment_index])
        emb = dmet.build_bath(mf, spec, args.bath_count)
        emb = dmet.build_embedded_hamiltonian(ints, mf, emb, 0.0)
        model = dmet.prepare_fragment(emb)
        h = model.h_qubit if args.untapered else model.h_tapered
        circuit = model.ansatz
    else:
        h_q, _, h_t, circuit = _molecular_qubit_problem(ints)
        h = h_q if args.untapered else h_t
    text = h.to_text() if args.what == "hamiltonian" else circuit.to_text()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dmetvqe",
        description="Embedding + variational-eigensolver workbench for small molecules")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value defaults file (flags win)")
        p.add_argument("--fragments", help='orbital index lists, e.g. "0,1;2,3"')
        p.add_argument("--bath-count", default=None,
                       help='count, or per-fragment list like "0;1"')
        p.add_argument("--noise", default="none", help="none | perth-like | path")
        p.add_argument("--shots", default="exact", help="integer or 'exact'")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--rdm-backend", choices=("noisy", "noiseless"),
                       default="noisy")
        p.add_argument("--refine", action="store_true")
        p.add_argument("--nu", type=float, default=5.5)
        p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
        p.add_argument("--c", type=float, default=1.0)
        p.add_argument("--max-dmet-cycles", type=int, default=10)
        p.add_argument("--spsa-iterations", type=int, default=None)
        p.add_argument("--out", help="CSV output path")

    run_p = sub.add_parser("run", help="execute one configuration")
    run_p.add_argument("--fcidump", required=True)
    run_p.add_argument("--pipeline", choices=("vqe", "dmet-vqe", "dmet-exact"),
                       default="dmet-vqe")
    run_p.add_argument("--distance", default=None)
    run_p.add_argument("--history-out",
                       help="write the optimizer history CSV (vqe pipeline)")
    run_p.add_argument("--cycles-out",
                       help="write the per-cycle mu/energy trace CSV (dmet pipelines)")
    add_common(run_p)
    run_p.set_defaults(func=cmd_run)

    dump_p = sub.add_parser("dump", help="emit a qubit Hamiltonian or ansatz")
    dump_p.add_argument("--fcidump", required=True)
    dump_p.add_argument("--what", choices=("hamiltonian", "circuit"),
                        default="hamiltonian")
    dump_p.add_argument("--fragments")
    dump_p.add_argument("--bath-count", type=int, default=None)
    dump_p.add_argument("--fragment-index", type=int, default=0)
    dump_p.add_argument("--untapered", action="store_true")
    dump_p.add_argument("--out")
    dump_p.set_defaults(func=cmd_dump)

    sweep_p = sub.add_parser("sweep", help="distance x method cross product")
    sweep_p.add_argument("--fixtures", default="fixtures")
    sweep_p.add_argument("--molecule", default="h4")
    sweep_p.add_argument("--distances", required=True)
    sweep_p.add_argument("--methods", required=True,
                         help="comma list, e.g. dmet-vqe,dmet-vqe:bath0+nlrdm+refine")
    sweep_p.add_argument("--jobs", type=int, default=1)
    add_common(sweep_p)
    sweep_p.set_defaults(func=cmd_sweep)

    ref_p = sub.add_parser("refine", help="refine an optimizer history CSV")
    ref_p.add_argument("--history", required=True)
    ref_p.add_argument("--nu", type=float, default=5.5)
    ref_p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    ref_p.add_argument("--c", type=float, default=1.0)
    ref_p.add_argument("--seed", type=int, default=0)
    ref_p.add_argument("--select-lambda", choices=("reeval", "sinefit"))
    ref_p.add_argument("--lambda-grid", default="1e-6,1e-4,1e-2")
    ref_p.add_argument("--out")
    ref_p.set_defaults(func=cmd_refine)
    return parser


def _apply_config_defaults(parser, values):
    """Install config-file values as typed defaults on every subparser.

    Flags given on the command line still win (flags > config > defaults).
    """
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                for sub_action in sub._actions:
                    if sub_action.dest not in values:
                        continue
                    raw = values[sub_action.dest]
                    if isinstance(sub_action, argparse._StoreTrueAction):
                        converted = raw.lower() in ("1", "true", "yes", "on")
                    elif sub_action.type is not None:
                        converted = sub_action.type(raw)
                    else:
                        converted = raw
                    sub.set_defaults(**{sub_action.dest: converted})


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    if "--config" in argv:
        idx = argv.index("--config")
        if idx + 1 >= len(argv):
            print("usage error: --config needs a path", file=sys.stderr)
            return 2
        try:
            _apply_config_defaults(parser, _load_config_file(argv[idx + 1]))
        except OSError as exc:
            print(f"usage error: {exc}", file=sys.stderr)
            return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (integrals.FcidumpFormatError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
