"""Command-line driver: curate, probe, schedule, score, evaluate, serve.

Exit codes: 0 success, 2 I/O failure, 3 validation failure (the error class
name goes to stderr), 64 usage error. A config file holds `key = value`
lines; explicit flags win over config values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from . import corpus as corpus_mod
from . import curriculum, funnel, reward, rlmath
from .errors import StforgeError

EXIT_OK = 0
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_USAGE = 64

SEED_ENV_VAR = "STFORGE_SANDBOX_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Config file
# ---------------------------------------------------------------------------

def load_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    cfg: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise StforgeError(f"config line {lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def _pick(flag_value, cfg: dict[str, str], key: str, cast: Callable, default):
    """Flag beats config beats default."""
    if flag_value is not None:
        return flag_value
    if key in cfg:
        return cast(cfg[key])
    return default


def _cast_bool(raw: str) -> bool:
    if raw.lower() in ("1", "true", "yes", "on"):
        return True
    if raw.lower() in ("0", "false", "no", "off"):
        return False
    raise StforgeError(f"not a boolean: {raw!r}")


# ---------------------------------------------------------------------------
# funnel
# ---------------------------------------------------------------------------

def _funnel_config(args, cfg: dict[str, str]) -> funnel.FunnelConfig:
    seed_default = int(cfg.get("seed", "0"))
    return funnel.FunnelConfig(
        shingle_k=_pick(args.shingle_k, cfg, "funnel.shingle_k", int, 3),
        num_hashes=_pick(args.num_hashes, cfg, "funnel.num_hashes", int, 256),
        lsh_bands=_pick(args.lsh_bands, cfg, "funnel.lsh_bands", int, 32),
        lsh_rows=_pick(args.lsh_rows, cfg, "funnel.lsh_rows", int, 8),
        jaccard_threshold=_pick(
            args.jaccard_threshold, cfg, "funnel.jaccard_threshold", float, 0.85
        ),
        semantic_distance_threshold=_pick(
            args.semantic_threshold, cfg, "funnel.semantic_distance_threshold", float, 0.15
        ),
        kcenter_target=_pick(args.kcenter_target, cfg, "funnel.kcenter_target", int, None),
        rng_seed=_pick(args.seed, cfg, "funnel.rng_seed", int, seed_default),
    )


def cmd_funnel(args) -> int:
    cfg = load_config(args.config)
    fcfg = _funnel_config(args, cfg)
    queries = corpus_mod.read_corpus(args.corpus)
    embeddings = funnel.read_sidecar(args.embeddings)
    curated = funnel.run_funnel(queries, embeddings, fcfg, threads=args.threads or 1)

    counts = curated.stage_counts
    print(
        "funnel: input={input} after_lexical={after_lexical} "
        "after_semantic={after_semantic} after_geometric={after_geometric}".format(**counts)
    )
    if args.dry_run:
        return EXIT_OK

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "survivors.txt", "w", encoding="utf-8", newline="") as fh:
        for qid in curated.surviving_ids:
            fh.write(qid + "\n")
    funnel.write_drop_log(out_dir / "drop_log.jsonl", curated)
    with open(out_dir / "summary.json", "w", encoding="utf-8", newline="") as fh:
        json.dump(counts, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe-select
# ---------------------------------------------------------------------------

def _read_probe_lines(path: str) -> list[tuple[str, list[float]]]:
    rows: list[tuple[str, list[float]]] = []
    declared_k: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StforgeError(f"probe line {lineno}: invalid JSON: {exc}") from exc
            if "query_id" not in obj or "rewards" not in obj:
                raise StforgeError(f"probe line {lineno}: needs query_id and rewards")
            rewards = obj["rewards"]
            k = obj.get("K", len(rewards))
            if k != len(rewards):
                raise StforgeError(
                    f"probe line {lineno}: K={k} disagrees with {len(rewards)} rewards"
                )
            if declared_k is None:
                declared_k = k
            elif k != declared_k:
                raise StforgeError(
                    f"probe line {lineno}: K={k} differs from earlier K={declared_k}"
                )
            rows.append((str(obj["query_id"]), list(rewards)))
    return rows


def cmd_probe_select(args) -> int:
    cfg = load_config(args.config)
    eps_mu = _pick(args.eps_mu, cfg, "curriculum.eps_mu", float, curriculum.DEFAULT_EPS)
    eps_var = _pick(args.eps_var, cfg, "curriculum.eps_var", float, curriculum.DEFAULT_EPS)
    k_max = _pick(args.k_max, cfg, "curriculum.k_max", int, curriculum.DEFAULT_K_MAX)

    rows = _read_probe_lines(args.probe)
    stats = [curriculum.probe_stats(qid, rewards) for qid, rewards in rows]
    records = curriculum.allocate_budget(
        curriculum.learnability_scores(stats, eps_mu, eps_var), k_max
    )

    census = {r.value: 0 for r in curriculum.Region}
    by_id = {s.query_id: s for s in stats}
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        for rec in records:
            census[rec.region.value] += 1
            s = by_id[rec.query_id]
            fh.write(json.dumps({
                "query_id": rec.query_id,
                "K": s.K,
                "mu_hat": s.mu_hat,
                "sigma2_hat": s.sigma2_hat,
                "raw_score": rec.raw_score,
                "normalized_score": rec.normalized_score,
                "region": rec.region.value,
                "budget": rec.budget,
            }, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
    print("regions: " + " ".join(f"{k}={v}" for k, v in sorted(census.items())))
    return EXIT_OK


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def _parse_weights(raw: str) -> dict[int, float]:
    out: dict[int, float] = {}
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        score, _, weight = part.partition(":")
        try:
            out[int(score)] = float(weight)
        except ValueError as exc:
            raise StforgeError(f"bad weight entry {part!r}; expected score:weight") from exc
    if not out:
        raise StforgeError(f"no weights parsed from {raw!r}")
    return out


def _schedule_from_config(cfg: dict[str, str], seed_flag: int | None) -> curriculum.CurriculumSchedule:
    indices = sorted({
        int(key.split(".")[1][5:])
        for key in cfg
        if key.startswith("schedule.phase") and key.split(".")[1][5:].isdigit()
    })
    if not indices:
        raise StforgeError("config defines no schedule.phaseN.* entries")
    phases = []
    for i in indices:
        prefix = f"schedule.phase{i}."
        try:
            weights = _parse_weights(cfg[prefix + "weights"])
            batch_size = int(cfg[prefix + "batch_size"])
            num_batches = int(cfg[prefix + "num_batches"])
        except KeyError as exc:
            raise StforgeError(f"phase {i} is missing {exc.args[0]!r}") from exc
        phases.append(curriculum.SchedulePhase(weights, batch_size, num_batches))
    seed_default = int(cfg.get("seed", "0"))
    seed = seed_flag if seed_flag is not None else int(cfg.get("schedule.rng_seed", seed_default))
    return curriculum.CurriculumSchedule(phases=tuple(phases), rng_seed=seed)


def cmd_schedule(args) -> int:
    cfg = load_config(args.config)
    schedule = _schedule_from_config(cfg, args.seed)
    queries = corpus_mod.read_corpus(args.corpus)
    batches = curriculum.build_schedule(queries, schedule)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        for phase_idx, phase in enumerate(batches):
            for batch_idx, ids in enumerate(phase):
                fh.write(json.dumps(
                    {"phase": phase_idx, "batch": batch_idx, "ids": ids},
                    ensure_ascii=False, separators=(",", ":"),
                ))
                fh.write("\n")
    total = sum(len(ids) for phase in batches for ids in phase)
    print(f"schedule: {len(batches)} phase(s), {total} scheduled ids")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reward-score
# ---------------------------------------------------------------------------

_SCENARIO_ALIASES = {
    "A": reward.Scenario.A_COMPLEX_PLANNING,
    "B": reward.Scenario.B_INFO_RETRIEVAL,
    "C": reward.Scenario.C_CONSULTATION,
}


def _resolve_scenario(raw: str) -> reward.Scenario:
    if raw in _SCENARIO_ALIASES:
        return _SCENARIO_ALIASES[raw]
    try:
        return reward.Scenario(raw)
    except ValueError as exc:
        raise StforgeError(f"unknown scenario {raw!r}") from exc


def _report_files(paths: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.is_file()))
        else:
            files.append(p)
    return sorted(set(files))


def _match_preset(weights: reward.Weights) -> reward.Scenario | None:
    for scenario, preset in reward.DEFAULT_WEIGHTS.items():
        if all(abs(a - b) <= 1e-9 for a, b in zip(weights.as_tuple(), preset.as_tuple())):
            return scenario
    return None


def cmd_reward_score(args) -> int:
    annotations: dict[str, corpus_mod.AnnotationVector] = {}
    if args.corpus:
        for q in corpus_mod.read_corpus(args.corpus):
            if q.annotation is not None:
                annotations[q.id] = q.annotation
    forced = _resolve_scenario(args.scenario) if args.scenario else None

    rows = []
    for path in _report_files(args.reports):
        report = reward.parse_evaluation_report(path.read_text(encoding="utf-8"))
        query_id = path.stem
        if forced is not None:
            scenario = forced
        elif query_id in annotations:
            scenario = reward.classify_scenario(annotations[query_id])
        else:
            scenario = _match_preset(report.weights)
        rows.append({
            "query_id": query_id,
            "scenario": scenario.value if scenario else None,
            "weights": {
                "w_reas": report.weights.w_reas,
                "w_info": report.weights.w_info,
                "w_pres": report.weights.w_pres,
            },
            "ratings": {
                "s_reas": report.ratings.s_reas,
                "s_info": report.ratings.s_info,
                "s_pres": report.ratings.s_pres,
            },
            "H": report.hallucination,
            "R": report.final,
        })
    rows.sort(key=lambda r: r["query_id"])
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
    print(f"scored {len(rows)} report(s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rl-eval
# ---------------------------------------------------------------------------

def _read_group_rewards(path: str) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "query_id" not in obj or "rewards" not in obj:
                raise StforgeError(f"rewards line {lineno}: needs query_id and rewards")
            out[str(obj["query_id"])] = [float(r) for r in obj["rewards"]]
    return out


def cmd_rl_eval(args) -> int:
    cfg = load_config(args.config)
    rl_cfg = rlmath.RLConfig(
        clip_eps=_pick(args.clip_eps, cfg, "rl.clip_eps", float, 0.2),
        kl_beta=_pick(args.kl_beta, cfg, "rl.kl_beta", float, 0.0),
        adv_delta=_pick(args.adv_delta, cfg, "rl.adv_delta", float, 1e-8),
        ratio_mode=_pick(args.mode, cfg, "rl.ratio_mode", str, "token_grpo"),
        mask_gspo=_pick(None, cfg, "rl.mask_gspo", _cast_bool, False),
    )
    try:
        rl_cfg.validate()
    except ValueError as exc:
        raise StforgeError(str(exc)) from exc

    trajectories = corpus_mod.read_trajectories(args.trajectories)
    rewards = _read_group_rewards(args.rewards)

    grouped: dict[str, list[rlmath.TokenLogProbs]] = {}
    order: list[str] = []
    for traj in trajectories:
        if traj.query_id not in grouped:
            order.append(traj.query_id)
            grouped[traj.query_id] = []
        grouped[traj.query_id].append(rlmath.TokenLogProbs.from_trajectory(traj))

    breakdowns = []
    for qid in order:
        if qid not in rewards:
            raise StforgeError(f"no rewards for group {qid!r}")
        group_rewards = rewards[qid]
        members = grouped[qid]
        if len(group_rewards) != len(members):
            raise StforgeError(
                f"group {qid!r}: {len(members)} trajectories but {len(group_rewards)} rewards"
            )
        group = rlmath.GroupRollout(
            query_id=qid,
            members=tuple(
                rlmath.RolloutMember(trajectory=t, reward=r)
                for t, r in zip(members, group_rewards)
            ),
        )
        breakdowns.append(rlmath.evaluate_group(group, rl_cfg))

    if not breakdowns:
        raise StforgeError("no rollout groups found")
    sizes = {b.G for b in breakdowns}
    if len(sizes) > 1:
        raise StforgeError(f"inconsistent group sizes: {sorted(sizes)}")
    kls = [b.mean_kl for b in breakdowns]
    report = {
        "mode": rl_cfg.ratio_mode,
        "G": breakdowns[0].G,
        "objective": sum(b.objective for b in breakdowns) / len(breakdowns),
        "mean_kl": (
            sum(kls) / len(kls) if all(k is not None for k in kls) else None
        ),
        "clip_fraction": sum(b.clip_fraction for b in breakdowns) / len(breakdowns),
    }
    payload = json.dumps(report, ensure_ascii=False, separators=(",", ":"), sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(payload)
            fh.write("\n")
    print(payload)
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

def cmd_serve(args) -> int:
    from .sandbox import ServeConfig, serve

    cfg = load_config(args.config)
    env_seed = os.environ.get(SEED_ENV_VAR)
    seed = _pick(
        args.seed, cfg, "serve.seed", int, int(env_seed) if env_seed else 0
    )
    config = ServeConfig(
        host=args.host,
        port=_pick(args.port, cfg, "serve.port", int, 8000),
        seed=seed,
        n_pois=_pick(args.pois, cfg, "serve.pois", int, 500),
        cache_capacity=_pick(args.cache_capacity, cfg, "serve.cache_capacity", int, 65_536),
        snapshot_path=args.snapshot,
    )
    serve(config)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="stforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("funnel", parents=[], help="run the three-stage curation funnel")
    p.add_argument("--corpus", required=True, help="corpus JSONL file")
    p.add_argument("--embeddings", required=True, help="embedding sidecar file")
    p.add_argument("--out-dir", default="funnel_out", help="output directory")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--dry-run", action="store_true", help="print counts, write nothing")
    p.add_argument("--threads", type=int, help="worker threads for signatures")
    p.add_argument("--shingle-k", type=int, dest="shingle_k")
    p.add_argument("--num-hashes", type=int, dest="num_hashes")
    p.add_argument("--lsh-bands", type=int, dest="lsh_bands")
    p.add_argument("--lsh-rows", type=int, dest="lsh_rows")
    p.add_argument("--jaccard-threshold", type=float, dest="jaccard_threshold")
    p.add_argument("--semantic-threshold", type=float, dest="semantic_threshold")
    p.add_argument("--kcenter-target", type=int, dest="kcenter_target")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_funnel)

    p = sub.add_parser("probe-select", help="turn probe rewards into budgeted records")
    p.add_argument("--probe", required=True, help="probe rewards JSONL file")
    p.add_argument("--out", required=True, help="output records JSONL file")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--k-max", type=int, dest="k_max")
    p.add_argument("--eps-mu", type=float, dest="eps_mu")
    p.add_argument("--eps-var", type=float, dest="eps_var")
    p.set_defaults(func=cmd_probe_select)

    p = sub.add_parser("schedule", help="emit curriculum batches from a phase config")
    p.add_argument("--corpus", required=True, help="annotated corpus JSONL file")
    p.add_argument("--config", required=True, help="config with schedule.phaseN.* entries")
    p.add_argument("--out", required=True, help="output batches JSONL file")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("reward-score", help="parse evaluator reports into scored records")
    p.add_argument("--reports", required=True, nargs="+", help="report files or directories")
    p.add_argument("--out", required=True, help="output scored JSONL file")
    p.add_argument("--corpus", help="corpus JSONL for scenario classification")
    p.add_argument("--scenario", help="force one scenario (A, B, C, or full tag)")
    p.set_defaults(func=cmd_reward_score)

    p = sub.add_parser("rl-eval", help="evaluate the clipped objective over rollouts")
    p.add_argument("--trajectories", required=True, help="trajectory JSONL file")
    p.add_argument("--rewards", required=True, help="per-group rewards JSONL file")
    p.add_argument("--out", help="write the report JSON here as well as stdout")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--mode", choices=["token_grpo", "sequence_gspo"])
    p.add_argument("--clip-eps", type=float, dest="clip_eps")
    p.add_argument("--kl-beta", type=float, dest="kl_beta")
    p.add_argument("--adv-delta", type=float, dest="adv_delta")
    p.set_defaults(func=cmd_rl_eval)

    p = sub.add_parser("serve", help="run the sandbox wire service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, help="0 picks a free port (printed at startup)")
    p.add_argument("--seed", type=int, help=f"world seed (default ${SEED_ENV_VAR} or 0)")
    p.add_argument("--pois", type=int, help="number of points of interest")
    p.add_argument("--cache-capacity", type=int, dest="cache_capacity")
    p.add_argument("--snapshot", help="write a world snapshot JSON to this path at startup")
    p.add_argument("--config", help="key=value config file")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StforgeError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
