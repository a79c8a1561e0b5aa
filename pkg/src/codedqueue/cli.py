"""Command-line interface: ``analyze``, ``sweep``, ``simulate`` and ``presets``.

Scenarios are TOML files::

    name = "voip-gec"

    [channel]
    kind = "gilbert-elliott"      # or "bsc" (p) or "fading"
    alpha = 0.3938
    beta = 0.0202
    eps_g = 0.0097
    eps_b = 0.3713

    [traffic]
    bit_rate_bps = 28750          # channel uses per second
    packet_rate_pps = 50
    mean_packet_bits = 88.55
    header_bits = 2

    [code]
    scheme = "bch"                # random-ml | random-md | bch
    N = [15, 31, 63, 127]         # int or list
    K = "table"                   # "table" (BCH), int, list, or {rate_min, rate_max}
    nu = "auto"                   # "auto" or a fixed int

    [constraints]
    ue_threshold = 1e-5
    tau = 5

    [sim]                         # optional
    slots = 10000000
    warmup = 10000
    seed = 1
    packet_length = "geometric"   # or "constant" with constant_length
    undetected = "genie"          # genie | crc-late | both

Physical parameters have no defaults.  ``[numerics]`` (tail_eps,
horizon_eps) and the ``[sim]`` bookkeeping keys do.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .channel import ChannelModel, from_fading
from .coding import CodeSpec, Scheme
from .errors import CodedQueueError, ConfigurationError, InstabilityError, NumericalError
from .optimizer import FIELDS, ProfileCache, SweepSpec, bch_grid, evaluate_point, find_min_nu, run_sweep, scenario_presets
from .queueing import ccdf
from .simulator import LengthMode, SimConfig, UndetectedMode, simulate
from .traffic import DEFAULT_TAIL_EPS, MMPP, TrafficModel

log = logging.getLogger("codedqueue")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


# --- scenario parsing ---------------------------------------------------------


class _Section:
    """Strict accessor: every key must be consumed and required keys must exist."""

    def __init__(self, data, path):
        if not isinstance(data, dict):
            raise ConfigurationError(f"[{path}] must be a table")
        self.data = dict(data)
        self.path = path
        self.used = set()

    def req(self, key, kind=None):
        if key not in self.data:
            raise ConfigurationError(f"missing required key '{self.path}.{key}'")
        return self.get(key, kind=kind)

    def get(self, key, default=None, kind=None):
        self.used.add(key)
        v = self.data.get(key, default)
        if kind is not None and v is not None and not isinstance(v, kind):
            raise ConfigurationError(f"'{self.path}.{key}' has wrong type {type(v).__name__}")
        return v

    def sub(self, key, required=True):
        if key not in self.data:
            if required:
                raise ConfigurationError(f"missing required section [{self.path + '.' if self.path else ''}{key}]")
            return None
        self.used.add(key)
        return _Section(self.data[key], f"{self.path}.{key}" if self.path else key)

    def finish(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigurationError(f"unknown key(s) in [{self.path or 'top level'}]: {', '.join(extra)}")


NUM = (int, float)


class Scenario:
    """Validated configuration built from a TOML document or a preset."""

    def __init__(self, name, channel, traffic, scheme, lengths, dims, nu, ue_threshold, tau,
                 sim=None, units=None, tail_eps=DEFAULT_TAIL_EPS, horizon_eps=1e-10):
        self.name = name
        self.channel = channel
        self.traffic = traffic
        self.scheme = Scheme(scheme)
        self.lengths = tuple(lengths)
        self.dims = dims
        self.nu = nu
        self.ue_threshold = ue_threshold
        self.tau = tau
        self.sim = sim or {}
        self.units = units or {}
        self.tail_eps = tail_eps
        self.horizon_eps = horizon_eps

    def sweep_spec(self):
        return SweepSpec(self.scheme, self.lengths, self.dims, self.ue_threshold, self.tau, self.channel,
                         self.traffic, name=self.name, tail_eps=self.tail_eps, horizon_eps=self.horizon_eps)

    @classmethod
    def from_spec(cls, spec: SweepSpec):
        units = {"lambda_per_channel_use": spec.traffic.lam, "rho": spec.traffic.rho}
        return cls(spec.name, spec.channel, spec.traffic, spec.scheme, spec.candidate_N, spec.candidate_K,
                   "auto", spec.ue_threshold, spec.tau, units=units)


def _parse_channel(sec):
    kind = sec.req("kind", str)
    if kind == "bsc":
        model = ChannelModel.bsc(sec.req("p", NUM))
    elif kind == "gilbert-elliott":
        model = ChannelModel.gilbert_elliott(*(sec.req(k, NUM) for k in ("alpha", "beta", "eps_g", "eps_b")))
    elif kind == "fading":
        model = from_fading(sec.req("doppler_symbol", NUM), sec.req("threshold_db", NUM), sec.req("mean_snr_db", NUM))
    else:
        raise ConfigurationError(f"channel.kind must be bsc, gilbert-elliott or fading, got {kind!r}")
    sec.finish()
    return model


def _parse_traffic(sec):
    bit_rate = float(sec.req("bit_rate_bps", NUM))
    if not bit_rate > 0:
        raise ConfigurationError("traffic.bit_rate_bps must be positive")
    mean_bits = float(sec.req("mean_packet_bits", NUM))
    header = sec.req("header_bits", int)
    units = {"channel_uses_per_second": bit_rate, "rho": 1.0 / mean_bits}
    mm_sec = sec.sub("mmpp", required=False)
    if mm_sec is not None:
        r1 = float(mm_sec.req("rate1_pps", NUM))
        r2 = float(mm_sec.req("rate2_pps", NUM))
        mat = mm_sec.req("modulator", list)
        mm_sec.finish()
        sec.finish()
        units.update(rate1_per_use=r1 / bit_rate, rate2_per_use=r2 / bit_rate)
        mmpp = MMPP(r1 / bit_rate, r2 / bit_rate, tuple(map(tuple, mat)))
        return TrafficModel(0.0, 1.0 / mean_bits, header, mmpp), units
    pps = float(sec.req("packet_rate_pps", NUM))
    sec.finish()
    units["lambda_per_channel_use"] = pps / bit_rate
    return TrafficModel(pps / bit_rate, 1.0 / mean_bits, header), units


def _parse_code(sec, header_bits):
    scheme = Scheme(sec.req("scheme", str))
    lengths = sec.req("N")
    lengths = [lengths] if isinstance(lengths, int) else list(lengths)
    if not lengths or not all(isinstance(n, int) for n in lengths):
        raise ConfigurationError("code.N must be an integer or a list of integers")
    k = sec.req("K")
    if k == "table":
        if scheme is not Scheme.BCH:
            raise ConfigurationError("code.K = 'table' is only valid for the bch scheme")
        dims = bch_grid(lengths, header_bits + 1)
    elif isinstance(k, int):
        dims = {n: (k,) for n in lengths}
    elif isinstance(k, list):
        dims = {n: tuple(k) for n in lengths}
    elif isinstance(k, dict):
        ks = _Section(k, "code.K")
        lo, hi = float(ks.req("rate_min", NUM)), float(ks.req("rate_max", NUM))
        ks.finish()
        dims = {n: tuple(x for x in range(max(1, math.ceil(lo * n - 1e-9)), min(n - 1, math.floor(hi * n + 1e-9)) + 1))
                for n in lengths}
    else:
        raise ConfigurationError("code.K must be 'table', an int, a list or {rate_min, rate_max}")
    nu = sec.get("nu", "auto")
    if nu != "auto" and not (isinstance(nu, int) and nu >= 0):
        raise ConfigurationError("code.nu must be 'auto' or a nonnegative integer")
    sec.finish()
    return scheme, lengths, dims, nu


SIM_KEYS = ("slots", "warmup", "seed", "packet_length", "constant_length", "undetected", "batches", "replications")


def parse_scenario(text, default_name="scenario"):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"scenario is not valid TOML: {exc}") from None
    top = _Section(data, "")
    name = top.get("name", default_name, str)
    channel = _parse_channel(top.sub("channel"))
    traffic, units = _parse_traffic(top.sub("traffic"))
    scheme, lengths, dims, nu = _parse_code(top.sub("code"), traffic.header_bits)
    cons = top.sub("constraints")
    ue = float(cons.req("ue_threshold", NUM))
    tau = cons.req("tau", int)
    cons.finish()
    sim = {}
    sim_sec = top.sub("sim", required=False)
    if sim_sec is not None:
        for key in SIM_KEYS:
            if key in sim_sec.data:
                sim[key] = sim_sec.get(key)
        sim_sec.finish()
    num = top.sub("numerics", required=False)
    tail_eps, horizon_eps = DEFAULT_TAIL_EPS, 1e-10
    if num is not None:
        tail_eps = float(num.get("tail_eps", tail_eps, NUM))
        horizon_eps = float(num.get("horizon_eps", horizon_eps, NUM))
        num.finish()
    top.finish()
    return Scenario(name, channel, traffic, scheme, lengths, dims, nu, ue, tau, sim, units, tail_eps, horizon_eps)


def load_scenario(args):
    if args.scenario and args.preset:
        raise ConfigurationError("give either --scenario or --preset, not both")
    if args.preset:
        presets = scenario_presets()
        if args.preset not in presets:
            raise ConfigurationError(f"unknown preset {args.preset!r}; available: {', '.join(sorted(presets))}")
        return Scenario.from_spec(presets[args.preset])
    if not args.scenario:
        raise ConfigurationError("a scenario is required (--scenario PATH or --preset NAME)")
    path = Path(args.scenario)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario {path}: {exc}") from None
    return parse_scenario(text, default_name=path.stem)


# --- writers ---------------------------------------------------------------------


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(fh, header_lines, fields, rows):
    for line in header_lines:
        fh.write(f"# {line}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([fmt(v) for v in r])


def read_csv(text):
    """Inverse of :func:`write_csv`: header comments and rows as strings."""
    lines = text.splitlines()
    comments = [ln[2:] for ln in lines if ln.startswith("# ")]
    body = [ln for ln in lines if not ln.startswith("#")]
    reader = csv.reader(body)
    fields = next(reader)
    return comments, fields, [row for row in reader]


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)
        log.info("wrote %s", out)


def _unit_lines(sc):
    return [f"{k}={fmt(v)}" for k, v in sorted(sc.units.items())]


# --- commands --------------------------------------------------------------


def _single_code(sc, args):
    N = args.N if args.N is not None else (sc.lengths[0] if len(sc.lengths) == 1 else None)
    if N is None:
        raise ConfigurationError("analyze needs a single block length (set code.N to one value or pass --N)")
    ks = sc.dims.get(N, ())
    K = args.K if args.K is not None else (ks[0] if len(ks) == 1 else None)
    if K is None:
        raise ConfigurationError("analyze needs a single code dimension (set code.K to one value or pass --K)")
    nu = args.nu if args.nu is not None else sc.nu
    return CodeSpec(sc.scheme, N, K, 0), nu


def cmd_analyze(args):
    sc = load_scenario(args)
    tau = args.tau if args.tau is not None else sc.tau
    code, nu = _single_code(sc, args)
    cache = ProfileCache()
    status_override = None
    if nu == "auto":
        choice = find_min_nu(sc.channel, code, sc.ue_threshold, cache)
        if not choice.feasible:
            status_override = "infeasible"
            nu = max(0, code.t if code.scheme is Scheme.BCH else 0)
        else:
            nu = choice.nu
    code = code.with_nu(nu)
    row, dist = evaluate_point(sc.channel, code, sc.traffic, tau, tail_eps=sc.tail_eps, horizon_eps=sc.horizon_eps,
                               force=args.force_unstable, cache=cache)
    if status_override:
        row = replace(row, status=status_override)
    elif row.P_ue > sc.ue_threshold and row.status == "ok":
        row = replace(row, status="infeasible")
    if dist is not None and not dist.normalizable:
        row = replace(row, status="unstable-forced")
    header = [f"scenario={sc.name}", f"tau={tau}", f"ue_threshold={fmt(sc.ue_threshold)}"] + _unit_lines(sc)
    levels = None
    if args.levels and dist is not None:
        q = np.arange(dist.horizon)
        levels = list(zip(q.tolist(), dist.level_mass.tolist(), ccdf(dist, q[:-1]).tolist() + [dist.residual_mass]))
    if args.format == "json":
        obj = {"header": header, "row": {f: _json_value(v) for f, v in zip(FIELDS, row.as_tuple())}}
        if levels is not None:
            obj["levels"] = [{"q": a, "prob": b, "ccdf": c} for a, b, c in levels]
        _emit(json.dumps(obj, indent=2) + "\n", args.out)
    else:
        buf = io.StringIO()
        write_csv(buf, header, FIELDS, [row.as_tuple()])
        _emit(buf.getvalue(), args.out)
        if levels is not None:
            lbuf = io.StringIO()
            write_csv(lbuf, header, ("q", "prob", "ccdf"), levels)
            if args.out is None:
                sys.stdout.write("\n" + lbuf.getvalue())
            else:
                out = Path(args.out)
                _emit(lbuf.getvalue(), out.with_name(out.stem + ".levels" + out.suffix))
    return EXIT_OK


def cmd_sweep(args):
    sc = load_scenario(args)
    if args.tau is not None:
        sc.tau = args.tau
    result = run_sweep(sc.sweep_spec(), workers=args.workers)
    best = result.best_row
    header = [f"scenario={sc.name}", f"tau={sc.tau}", f"ue_threshold={fmt(sc.ue_threshold)}"] + _unit_lines(sc)
    header.append("best=" + ("null" if best is None else f"N={best.N},K={best.K},nu={best.nu}"))
    if args.format == "json":
        obj = {
            "header": header,
            "rows": [{f: _json_value(v) for f, v in zip(FIELDS, r.as_tuple())} for r in result.rows],
            "best": None if best is None else {f: _json_value(v) for f, v in zip(FIELDS, best.as_tuple())},
        }
        _emit(json.dumps(obj, indent=2) + "\n", args.out)
    else:
        buf = io.StringIO()
        write_csv(buf, header, FIELDS, [r.as_tuple() for r in result.rows])
        _emit(buf.getvalue(), args.out)
    return EXIT_OK


def _sim_settings(sc, args):
    s = dict(sc.sim)
    seed = args.seed if args.seed is not None else s.get("seed")
    if args.reproducible and seed is None:
        raise ConfigurationError("--reproducible needs a seed (--seed or sim.seed)")
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % 2**64)
    length_mode = s.get("packet_length", "geometric")
    constant = s.get("constant_length")
    if args.constant_length is not None:
        length_mode, constant = "constant", args.constant_length
    undetected = args.undetected or s.get("undetected", "genie")
    modes = ["genie", "crc-late"] if undetected == "both" else [undetected]
    slots = args.slots if args.slots is not None else s.get("slots", 10_000_000)
    warmup = s.get("warmup", min(10_000, slots // 100))
    tau = args.tau if args.tau is not None else sc.tau
    taus = tuple(range(max(10, tau) + 1))
    configs = []
    for m in modes:
        configs.append((m, SimConfig(int(slots), int(seed), LengthMode(length_mode), UndetectedMode(m), int(warmup),
                                     constant, int(s.get("batches", 50)), int(s.get("replications", 1)), taus)))
    return configs


def cmd_simulate(args):
    sc = load_scenario(args)
    code, nu = _single_code(sc, args)
    if nu == "auto":
        choice = find_min_nu(sc.channel, code, sc.ue_threshold)
        nu = choice.nu if choice.feasible else (code.t if code.scheme is Scheme.BCH else 0)
    code = code.with_nu(nu)
    configs = _sim_settings(sc, args)
    for mode, cfg in configs:
        report = simulate(sc.channel, code, sc.traffic, cfg)
        header = [f"seed={cfg.seed}", f"scenario={sc.name}", f"N={code.N}", f"K={code.K}", f"nu={code.nu}",
                  f"undetected={mode}", f"packet_length={cfg.packet_length_mode.value}",
                  f"slots={cfg.slots}", f"warmup={cfg.warmup}", f"batches={cfg.batches}",
                  f"mean_queue={fmt(report.mean_queue)}",
                  f"effective_service_rate={fmt(report.effective_service_rate)}"]
        header += [f"{k}={v}" for k, v in report.decode_counters.items()] + _unit_lines(sc)
        out = args.out
        if out is None:
            out = f"{sc.name}.simulate.{mode}.{args.format}"
        elif len(configs) > 1:
            p = Path(out)
            out = str(p.with_name(f"{p.stem}.{mode}{p.suffix}"))
        if args.format == "json":
            obj = {"header": header, "ccdf": [{"tau": t, "estimate": e, "ci_halfwidth": h} for t, e, h in report.ccdf_rows()]}
            _emit(json.dumps(obj, indent=2) + "\n", out)
        else:
            buf = io.StringIO()
            write_csv(buf, header, ("tau", "estimate", "ci_halfwidth"), report.ccdf_rows())
            _emit(buf.getvalue(), out)
    return EXIT_OK


def cmd_presets(args):
    presets = scenario_presets()
    rows = []
    for name, spec in sorted(presets.items()):
        ch = spec.channel
        chan = f"bsc(p={fmt(ch.p)})" if ch.is_bsc else (
            f"ge(alpha={fmt(ch.alpha)},beta={fmt(ch.beta)},eps_g={fmt(ch.eps_g)},eps_b={fmt(ch.eps_b)})")
        rows.append((name, spec.scheme.value, chan, " ".join(map(str, spec.candidate_N)),
                     spec.ue_threshold, spec.tau, spec.traffic.lam, spec.traffic.rho, spec.traffic.header_bits))
    fields = ("name", "scheme", "channel", "N", "ue_threshold", "tau", "lambda_per_use", "rho", "header_bits")
    if args.format == "json":
        _emit(json.dumps([{f: _json_value(v) for f, v in zip(fields, r)} for r in rows], indent=2) + "\n", args.out)
    else:
        buf = io.StringIO()
        write_csv(buf, [], fields, rows)
        _emit(buf.getvalue(), args.out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="codedqueue", description="Queueing analysis of coded links over binary channels.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", help="TOML scenario file")
            sp.add_argument("--preset", help="built-in scenario name")
            sp.add_argument("--tau", type=int, help="queue threshold in packets")
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    a = sub.add_parser("analyze", help="evaluate a single (N, K, nu) point")
    common(a)
    a.add_argument("--N", type=int)
    a.add_argument("--K", type=int)
    a.add_argument("--nu", type=int)
    a.add_argument("--levels", action="store_true", help="also emit the stationary level masses and CCDF")
    a.add_argument("--force-unstable", action="store_true", help="solve even if the stability factor is >= 1")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="two-stage (N, K, nu) selection")
    common(s)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("simulate", help="Monte Carlo CCDF of the queue")
    common(m)
    m.add_argument("--N", type=int)
    m.add_argument("--K", type=int)
    m.add_argument("--nu", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--slots", type=int)
    m.add_argument("--reproducible", action="store_true", help="require an explicit seed")
    m.add_argument("--undetected", choices=("genie", "crc-late", "both"))
    m.add_argument("--constant-length", type=int, help="use constant packet length in bits")
    m.set_defaults(func=cmd_simulate)

    r = sub.add_parser("presets", help="list built-in scenarios")
    common(r, scenario=False)
    r.set_defaults(func=cmd_presets)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InstabilityError as exc:
        print(f"unstable: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CodedQueueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
