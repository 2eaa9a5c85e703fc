"""Command-line entry point: ``incentive-metering <command> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction

from . import netmodel
from .counters import CHECKED, diff
from .crypto import SUPPORTED_BITS
from .errors import MeteringError
from .programs import ProgramSpec, Purpose


def _emit(rows: list[dict], fmt: str, table_text: str | None = None) -> None:
    if fmt == "json":
        print(json.dumps(rows, indent=2, sort_keys=True))
    elif fmt == "csv":
        buf = io.StringIO()
        if rows:
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        print(buf.getvalue(), end="")
    else:
        print(table_text if table_text is not None else "\n".join(str(r) for r in rows))


def cmd_run(args) -> int:
    from .sim.harness import run
    from .sim.scenario import AdversarySpec, ScenarioConfig, load_scenario

    overrides = {"seed": args.seed, "rsa_bits": args.rsa_bits}
    if args.optimized:
        overrides["optimized"] = True
    if args.adversary:
        overrides["adversary"] = AdversarySpec.parse(args.adversary)
    if args.scenario:
        cfg = load_scenario(args.scenario, **overrides)
    else:
        cfg = ScenarioConfig(**{k: v for k, v in overrides.items() if v is not None})
    result = run(cfg)
    if args.out:
        for name, path in result.write(args.out).items():
            print(f"wrote {path}", file=sys.stderr)
    m = result.metrics
    summary = {
        "reports_sent": m["reports"]["sent"],
        "reports_accepted": m["reports"]["accepted"],
        "reports_rejected": m["reports"]["rejected"],
        "reports_dropped": m["reports"]["dropped"],
        "archive_records": m["archive_records"],
        "tokens_issued": m["tokens"]["issued"],
        "tampered": m["adversary"]["tampered"],
        "clamp_events": m["clamp_events"],
    }
    if args.format == "json":
        print(result.metrics_json(), end="")
    else:
        text = "\n".join(f"{k:<18} {v}" for k, v in summary.items())
        _emit([summary], args.format, text)
    return 0


def cmd_bench(args) -> int:
    from .sim.bench import REFERENCE, benchmark, format_bench

    rows = benchmark(args.bits, repeats=args.repeats, freq=args.freq, pd=args.pd)
    out = []
    for r in rows:
        ref = REFERENCE.get(r.bits, (None, None, None))
        out.append({"bits": r.bits, "t_sm": r.t_sm, "t_agg": r.t_agg, "t_up": r.t_up, "t_vas": r.t_vas,
                    "ref_t_sm": ref[0], "ref_t_up": ref[1], "ref_t_vas": ref[2]})
    _emit(out, args.format, format_bench(rows))
    monotone = all(a.t_vas < b.t_vas for a, b in zip(rows, rows[1:]))
    print(f"total runtime strictly increasing with key size: {monotone}", file=sys.stderr)
    return 0


def cmd_nettable(args) -> int:
    cells = netmodel.transmission_table()
    rows = [{"message": c.message, "payload": c.payload, "stack": c.stack.value, "packet": c.packet,
             "seconds": f"{float(c.seconds):.5f}"} for c in cells]
    text = netmodel.format_table(cells)
    text += "\nminimum bandwidth: " + ", ".join(
        f"{s.value} {netmodel.min_required_bandwidth(netmodel.REFERENCE_PAYLOADS.values(), s) // 1000} kbps"
        for s in netmodel.Stack)
    _emit(rows, args.format, text)
    return 0


def cmd_counters(args) -> int:
    from .sim.harness import run
    from .sim.scenario import ScenarioConfig

    spec = ProgramSpec(args.freq, args.pd, Purpose.DATA_DRIVEN, Fraction(args.nsc))
    cfg = ScenarioConfig(meters=args.participants, programs=(spec,),
                         participation=(("pr-01", args.participants),), threshold=args.threshold,
                         rsa_bits=args.rsa_bits, seed=args.seed)
    result = run(cfg)
    sim = result.simulation
    from .counters import predict_counters
    parts = sorted(sim.participants.get("pr-01", []))
    if not parts:
        print("program was cancelled; nothing to check", file=sys.stderr)
        return 1
    pred = predict_counters(args.freq * args.pd, len(parts), noisy=spec.nsc > 0)
    measured = {
        "meter": sim.meters[parts[0]].counters,
        "aggregator": sim.agg.counters,
        "utility": sim.utility_view(parts[0]),
    }
    rows, ok = [], True
    for entity, m in measured.items():
        p = getattr(pred, entity)
        for name in CHECKED:
            match = getattr(m, name) == getattr(p, name)
            ok &= match
            rows.append({"entity": entity, "counter": name, "measured": getattr(m, name),
                         "predicted": getattr(p, name), "match": match})
    others = [mid for mid in parts if diff(sim.meters[mid].counters, pred.meter)
              or diff(sim.utility_view(mid), pred.utility)]
    ok &= not others
    text = "\n".join(f"{r['entity']:<11}{r['counter']:<12}{r['measured']:>8}{r['predicted']:>8}  "
                     f"{'ok' if r['match'] else 'MISMATCH'}" for r in rows)
    text += f"\n{'all match' if ok else 'mismatch'} (n={args.freq * args.pd}, participants={len(parts)})"
    _emit(rows, args.format, text)
    return 0 if ok else 1


def cmd_validate(args) -> int:
    from .sim.dataset import load_dataset

    streams = load_dataset(args.path, strict=not args.lenient)
    rows = [{"meter_id": m, "readings": len(s), "first": s[0].timestamp.isoformat(),
             "last": s[-1].timestamp.isoformat()} for m, s in sorted(streams.items())]
    _emit(rows, args.format, "\n".join(f"{r['meter_id']:<16}{r['readings']:>8}  {r['first']} .. {r['last']}"
                                       for r in rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="incentive-metering",
                                description="Privacy-preserving incentive metering simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def fmt(sp):
        sp.add_argument("--format", choices=("json", "csv", "table"), default="table")

    r = sub.add_parser("run", help="run a scenario and export metrics and datasets")
    r.add_argument("--scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--rsa-bits", type=int, choices=SUPPORTED_BITS)
    r.add_argument("--out")
    r.add_argument("--optimized", action="store_true")
    r.add_argument("--adversary", help="none | eavesdrop | tamper:<rate>, optionally @nan,wan")
    fmt(r)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="per-entity timing across key sizes")
    b.add_argument("--bits", type=int, nargs="+", choices=SUPPORTED_BITS, default=list(SUPPORTED_BITS))
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--freq", type=int, default=4)
    b.add_argument("--pd", type=int, default=7)
    fmt(b)
    b.set_defaults(func=cmd_bench)

    n = sub.add_parser("nettable", help="packet sizes and transmission times per link")
    fmt(n)
    n.set_defaults(func=cmd_nettable)

    c = sub.add_parser("counters", help="check measured operation counts against the closed forms")
    c.add_argument("--freq", type=int, default=4)
    c.add_argument("--pd", type=int, default=7)
    c.add_argument("--nsc", default="1")
    c.add_argument("--participants", type=int, default=20)
    c.add_argument("--threshold", type=int, default=10)
    c.add_argument("--rsa-bits", type=int, choices=SUPPORTED_BITS, default=1024)
    c.add_argument("--seed", type=int, default=42)
    fmt(c)
    c.set_defaults(func=cmd_counters)

    v = sub.add_parser("validate-dataset", help="check a readings CSV")
    v.add_argument("path")
    v.add_argument("--lenient", action="store_true", help="allow gaps on the 15-minute grid")
    fmt(v)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MeteringError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
