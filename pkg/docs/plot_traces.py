"""Plot mean cumulative regret (with standard-error bands) from trace CSVs."""

import argparse
import collections

import matplotlib.pyplot as plt
import numpy as np


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("traces", nargs="+", help="trace.csv files from `genban simulate`")
    ap.add_argument("-o", "--out", default="regret.png")
    args = ap.parse_args()
    series = collections.defaultdict(dict)  # agent -> task -> [cum_regret by t]
    for path in args.traces:
        with open(path) as fh:
            for line in fh:
                if line.startswith("#") or line.startswith("task_id"):
                    continue
                task, t, agent, _, _, cum = line.rstrip("\n").split(",")
                series[agent].setdefault(int(task), []).append((int(t), float(cum)))
    for agent, by_task in sorted(series.items()):
        curves = np.array([[v for _, v in sorted(steps)] for steps in by_task.values()])
        mean = curves.mean(axis=0)
        se = curves.std(axis=0, ddof=1) / np.sqrt(curves.shape[0])
        ts = np.arange(curves.shape[1])
        plt.plot(ts, mean, label=agent)
        plt.fill_between(ts, mean - se, mean + se, alpha=0.2)
    plt.xlabel("timestep")
    plt.ylabel("mean cumulative regret")
    plt.legend()
    plt.tight_layout()
    plt.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
