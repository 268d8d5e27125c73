"""Command-line orchestration: pretrain, select, train, weight-lth, eval, macs, visualize."""

import argparse
import configparser
import hashlib
import json
import os
import sys

import torch

from . import data as data_mod
from . import evaluation, reports, viz, weight_lth
from .errors import PatchTicketError
from .macs import count_macs
from .models import PRESETS, build_model, load_checkpoint, save_checkpoint, state_digest
from .selector import SelectorConfig, stage_keep_counts, target_sparsity
from .store import TicketStore, materialize
from .training import RunConfig, train


def _artifact_root(args):
    return args.artifacts or os.environ.get("PATCHTICKET_ARTIFACTS", "artifacts")


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, params, artifact_paths):
    manifest = {
        "command": command,
        "params": params,
        "artifacts": {
            os.path.basename(p): _file_digest(p)
            for p in artifact_paths if os.path.isfile(p)
        },
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{command}.manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _selector_config(args):
    depths = tuple(int(d) for d in str(args.stage_depths).split(","))
    return SelectorConfig(stage_depths=depths, keep_rate=args.keep_rate)


def _open_data(args, split=None):
    return data_mod.open_dataset(
        args.data, split=split or args.split,
        image_size=args.image_size, seed=args.data_gen_seed,
    )


def _load_ini(path):
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise PatchTicketError(f"cannot read config file {path}")
    flat = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            flat[key.replace("-", "_")] = value
    return flat


def _apply_config_defaults(parser, argv):
    """Config file values become parser defaults; explicit flags still win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if known.config:
        flat = _load_ini(known.config)
        usable = {}
        for action in parser._actions:
            if action.dest in flat:
                value = flat[action.dest]
                if action.type:
                    value = action.type(value)
                usable[action.dest] = value
        parser.set_defaults(**usable)


def _add_common(p):
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--artifacts", help="artifact root (env PATCHTICKET_ARTIFACTS)")
    p.add_argument("--data", default="builtin:2000",
                   help="'builtin[:n]' or a labeled image folder")
    p.add_argument("--split", default="train")
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--data-gen-seed", type=int, default=0,
                   help="seed for the builtin generator")


def _add_selector_flags(p):
    p.add_argument("--keep-rate", type=float, default=0.8)
    p.add_argument("--stage-depths", default="3,5,7",
                   help="comma-separated 1-based layer indices")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="patchticket",
        description="Data-level lottery tickets for vision transformers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a model on full images")
    _add_common(p)
    p.add_argument("--preset", default="tiny-desk", choices=sorted(PRESETS))
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", required=True, help="output checkpoint path")

    p = sub.add_parser("select", help="materialize winning-ticket masks into a store")
    _add_common(p)
    _add_selector_flags(p)
    p.add_argument("--selector", required=True, help="pretrained checkpoint")
    p.add_argument("--out", required=True, help="output .tickets path")

    p = sub.add_parser("train", help="train along one of the three paths")
    _add_common(p)
    _add_selector_flags(p)
    p.add_argument("--path", required=True, choices=("lt", "rc", "full"))
    p.add_argument("--preset", default="tiny-desk", choices=sorted(PRESETS))
    p.add_argument("--store", help="ticket store (required for --path lt)")
    p.add_argument("--rc-seed", type=int, help="random-mask seed (required for rc)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--warmup-epochs", type=int, default=0)
    p.add_argument("--seed", type=int, default=0, help="init seed")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--occlude", action="store_true",
                   help="pixel occlusion instead of token removal")
    p.add_argument("--out", required=True, help="output run directory")

    p = sub.add_parser("weight-lth", help="conventional weight-level LTH study")
    _add_common(p)
    p.add_argument("--pretrained", required=True)
    p.add_argument("--scope", default="MSA_MLP",
                   choices=weight_lth.SCOPES)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seeds", default="0", help="comma-separated RR seeds")
    p.add_argument("--rewind-epoch", type=int, default=0,
                   help="0 = classic epoch-0 initialization")
    p.add_argument("--init-checkpoint",
                   help="epoch-0 (or rewound) checkpoint; defaults to a fresh "
                        "build with the pretrained seed")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="accuracy matrix and winning-ticket verdict")
    _add_common(p)
    p.add_argument("--pretrain", help="pretrained checkpoint")
    p.add_argument("--lt", help="LT-trained checkpoint")
    p.add_argument("--rc", help="RC-trained checkpoint")
    p.add_argument("--store", required=True)
    p.add_argument("--occlude", action="store_true")
    p.add_argument("--eps", type=float, default=0.5, help="match tolerance (pp)")
    p.add_argument("--delta", type=float, default=1.0, help="advantage margin (pp)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("macs", help="analytic MACs accounting")
    _add_common(p)
    p.add_argument("--preset", default="deit-small-like", choices=sorted(PRESETS))
    p.add_argument("--keep-rates", default="0.95,0.9,0.85,0.8")
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--store", help="average per-image kept counts from a store")
    p.add_argument("--out", required=True)

    p = sub.add_parser("visualize", help="stage-by-stage sparsification figures")
    _add_common(p)
    _add_selector_flags(p)
    p.add_argument("--selector", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--out", required=True)
    return parser


def cmd_pretrain(args):
    handle = _open_data(args)
    model = build_model(PRESETS[args.preset], args.seed)
    config = RunConfig(path="full", epochs=args.epochs, lr=args.lr,
                       batch_size=args.batch_size, data_seed=args.seed)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    workdir = os.path.join(_artifact_root(args), f"pretrain-{args.preset}-s{args.seed}")
    _, history = train(model, handle, config, workdir)
    save_checkpoint(model, args.out)
    reports.plot_history([history], os.path.join(out_dir, "pretrain-history.png"),
                         labels=["full"])
    write_manifest(out_dir, "pretrain", vars(args) | {"data_digest": handle.digest},
                   [args.out])
    return 0


def cmd_select(args):
    handle = _open_data(args)
    selector = load_checkpoint(args.selector)
    cfg = _selector_config(args)
    fingerprint = state_digest(selector)
    store = materialize(args.out, selector, handle, cfg, fingerprint)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    print(f"store: {len(store)} masks, keep_rate={cfg.keep_rate}, "
          f"target sparsity {100 * target_sparsity(cfg):.1f}%")
    write_manifest(out_dir, "select",
                   vars(args) | {"data_digest": handle.digest,
                                 "selector_fingerprint": fingerprint},
                   [args.out])
    return 0


def cmd_train(args):
    if args.path == "lt" and not args.store:
        raise UsageError("--path lt requires --store")
    if args.path == "rc" and args.rc_seed is None:
        raise UsageError("--path rc requires --rc-seed")
    handle = _open_data(args)
    model = build_model(PRESETS[args.preset], args.seed)
    sel_cfg = None if args.path == "full" else _selector_config(args)
    config = RunConfig(
        path=args.path, epochs=args.epochs, selector_config=sel_cfg,
        warmup_epochs=args.warmup_epochs, store_path=args.store,
        rc_seed=args.rc_seed, lr=args.lr, batch_size=args.batch_size,
        data_seed=args.data_seed,
        input_mode="occlude" if args.occlude else "remove",
    )
    os.makedirs(args.out, exist_ok=True)
    _, history = train(model, handle, config, args.out)
    final = os.path.join(args.out, "final.pt")
    save_checkpoint(model, final)
    reports.plot_history([history], os.path.join(args.out, "history.png"),
                         labels=[args.path])
    write_manifest(args.out, "train", vars(args) | {"data_digest": handle.digest},
                   [final, os.path.join(args.out, "history.json")])
    return 0


def cmd_weight_lth(args):
    handle = _open_data(args, split="train")
    test = _open_data(args, split="test")
    pretrained = load_checkpoint(args.pretrained)
    mask = weight_lth.magnitude_prune(pretrained, args.scope, args.sparsity)
    if args.init_checkpoint:
        init_state = load_checkpoint(args.init_checkpoint)
    else:
        init_state = build_model(pretrained.config, pretrained.seed or 0)
    runs = []
    for seed in (int(s) for s in args.seeds.split(",")):
        lth_model = build_model(pretrained.config, init_state.seed)
        lth_model.load_state_dict(init_state.state_dict())
        weight_lth.train_masked(lth_model, mask, handle, args.epochs,
                                lr=args.lr, batch_size=args.batch_size,
                                data_seed=seed)
        rr_model = weight_lth.random_reinit(pretrained.config, seed + 10_000)
        weight_lth.train_masked(rr_model, mask, handle, args.epochs,
                                lr=args.lr, batch_size=args.batch_size,
                                data_seed=seed)
        rewound = args.rewind_epoch > 0
        runs.append(weight_lth.LthRun(args.scope, mask.achieved_sparsity, "lth",
                                      evaluation.evaluate(lth_model, test),
                                      rewound))
        runs.append(weight_lth.LthRun(args.scope, mask.achieved_sparsity, "rr",
                                      evaluation.evaluate(rr_model, test),
                                      rewound))
    rows = weight_lth.lth_report(runs)
    os.makedirs(args.out, exist_ok=True)
    reports.write_rows(rows, os.path.join(args.out, "weight-lth.tsv"))
    text = weight_lth.format_report(rows)
    with open(os.path.join(args.out, "weight-lth.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    write_manifest(args.out, "weight-lth",
                   vars(args) | {"data_digest": handle.digest},
                   [os.path.join(args.out, "weight-lth.tsv")])
    return 0


def cmd_eval(args):
    test = _open_data(args, split="test" if args.split == "train" else args.split)
    store = TicketStore.load(args.store)
    models = {}
    for arm in ("pretrain", "lt", "rc"):
        path = getattr(args, arm)
        if path:
            models[arm] = load_checkpoint(path)
    matrix = evaluation.build_matrix(models, test, store, occlusion=args.occlude)
    os.makedirs(args.out, exist_ok=True)
    reports.write_rows(matrix.rows(), os.path.join(args.out, "matrix.tsv"))
    text = reports.format_matrix(matrix)
    with open(os.path.join(args.out, "matrix.txt"), "w") as fh:
        fh.write(text + "\n")
    reports.plot_matrix(matrix, os.path.join(args.out, "matrix.png"))
    print(text)
    if "lt" in models and "rc" in models and "pretrain" in models:
        v = evaluation.verdict(matrix, args.eps, args.delta)
        with open(os.path.join(args.out, "verdict.json"), "w") as fh:
            json.dump(vars(v), fh, indent=2)
        print(f"winning ticket: {v.is_winning} "
              f"(match={v.match_pretrain}, advantage={v.clear_advantage})")
    write_manifest(args.out, "eval", vars(args) | {"data_digest": test.digest},
                   [os.path.join(args.out, "matrix.tsv")])
    return 0


def cmd_macs(args):
    config = PRESETS[args.preset]
    n = config.num_patches
    rows, points = [], []
    if args.store:
        store = TicketStore.load(args.store)
        dense, sparse, ratio = evaluation.macs_report(config, store)
        sparsity = next(iter(store.records.values())).target_sparsity
        rows.append({"sparsity": round(sparsity, 4), "dense_macs": dense,
                     "sparse_macs": round(sparse), "ratio": round(ratio, 4)})
        points.append((sparsity, ratio))
    else:
        for rate in (float(r) for r in args.keep_rates.split(",")):
            cfg = SelectorConfig(stage_depths=tuple(range(1, args.stages + 1)),
                                 keep_rate=rate)
            kept = stage_keep_counts(n, cfg)[-1]
            dense = count_macs(config, n + 1)
            sparse = count_macs(config, kept + 1)
            rows.append({
                "keep_rate": rate,
                "sparsity": round(target_sparsity(cfg), 4),
                "n_tokens": kept + 1,
                "dense_macs": dense,
                "sparse_macs": sparse,
                "ratio": round(sparse / dense, 4),
            })
            points.append((target_sparsity(cfg), sparse / dense))
    os.makedirs(args.out, exist_ok=True)
    reports.write_rows(rows, os.path.join(args.out, "macs.tsv"))
    reports.plot_macs(points, os.path.join(args.out, "macs.png"))
    for row in rows:
        print("\t".join(f"{k}={v}" for k, v in row.items()))
    write_manifest(args.out, "macs", vars(args),
                   [os.path.join(args.out, "macs.tsv")])
    return 0


def cmd_visualize(args):
    handle = _open_data(args)
    selector = load_checkpoint(args.selector)
    cfg = _selector_config(args)
    mask, stage_sets = viz.stage_kept_sets_for_image(
        selector, handle.image(args.image_id), cfg)
    paths = viz.render_stages(handle.raw_image(args.image_id), stage_sets,
                              selector.config.patch_size, args.out)
    write_manifest(args.out, "visualize",
                   vars(args) | {"data_digest": handle.digest}, paths)
    print("\n".join(paths))
    return 0


class UsageError(Exception):
    pass


COMMANDS = {
    "pretrain": cmd_pretrain,
    "select": cmd_select,
    "train": cmd_train,
    "weight-lth": cmd_weight_lth,
    "eval": cmd_eval,
    "macs": cmd_macs,
    "visualize": cmd_visualize,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _apply_config_defaults(parser, argv)
    args = parser.parse_args(argv)
    torch.set_num_threads(max(os.cpu_count() or 1, 1))
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except PatchTicketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
