"""Pool the 30 and 90 degree domains and see how well each score ranks the near one first.

Prints one AUC per method, then the d-score AUC over pretraining epochs.
"""

import argparse

from bridgeda.data import DomainSamples, build_sequence, subsequence
from bridgeda.discovery import (auc, dscore, dscore_config, mmd_closeness, ood_closeness_model,
                                pretrain_dscore, stop_epoch_for)
from bridgeda.trainer import TrainConfig, pretrain_source


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    seq = build_sequence([0, 30, 90], seed=args.seed)
    src = seq[0].train
    pool = DomainSamples.concat([seq[1].train, seq[2].train])
    near = (pool.domain == 1).astype(int)

    print(f"mmd     auc {auc(mmd_closeness(pool.X, src.X).oriented, near):.3f}")
    base = pretrain_source(subsequence(seq, [0, 2]), TrainConfig(seed=args.seed))
    print(f"ood     auc {auc(ood_closeness_model(base, pool.X).oriented, near):.3f}")

    cfg = dscore_config(TrainConfig(seed=args.seed, eval_every=10**6))
    bundle, curve = pretrain_dscore(src, pool, cfg, near=near)
    stop = stop_epoch_for(cfg.epochs)
    print(f"d-score auc {auc(dscore(bundle, pool.X).oriented, near):.3f} (epoch {stop} snapshot)")
    print("d-score auc by epoch:")
    for epoch, a in curve[:: max(1, len(curve) // 15)]:
        print(f"  {epoch:4d}  {a:.3f}")


if __name__ == "__main__":
    main()
