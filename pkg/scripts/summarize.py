"""Print the headline estimates of every results/<run>/estimates.json as one table."""
import json
import sys
from pathlib import Path

KEYS = ("regime", "omega_hat_rad_s", "a_hat_rad_s", "b0_hat_tesla", "beta_hat_abs_rad", "ipr_max", "shift_d_seconds")


def fmt(v):
    return "-" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v))


def main(root: Path) -> None:
    print("run".ljust(24) + "".join(k[:16].ljust(18) for k in KEYS))
    for est in sorted(root.glob("*/estimates.json")):
        d = json.loads(est.read_text())
        print(est.parent.name.ljust(24) + "".join(fmt(d.get(k)).ljust(18) for k in KEYS))


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "results")
