import json
from pathlib import Path

RATE_LABELS = (
    ("Acc_clean", "Accuracy on original clips"),
    ("Acc_adv", "Accuracy on adversarial clips"),
    ("S", "Untargeted success rate"),
    ("S_correct", "Success rate (originally correct clips)"),
    ("S_t", "Targeted success rate"),
)


def _indent_block(text: str, indent: int = 2) -> str:
    """Return the given multiline text indented by the specified spaces."""
    prefix = " " * indent
    return "\n".join(prefix + line for line in text.splitlines())


def _fmt(value, digits: int = 4) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def _matrix_lines(matrix) -> list:
    width = max((len(str(v)) for row in matrix for v in row), default=1)
    return [" ".join(str(v).rjust(width) for v in row) for row in matrix]


def summary_to_text(data: dict) -> str:
    """Render an aggregate report mapping as a plain-text summary."""
    lines = []
    config = data.get("config", {})
    attack = config.get("attack", {})
    if attack:
        lines.append(f"Method: {attack.get('method', 'unknown')} ({attack.get('mode', 'untargeted')})")
        lines.append(f"Iterations (M): {attack.get('iterations', 'n/a')}")
        if attack.get("method") in ("fgsm", "bim"):
            lines.append(f"Epsilon: {attack.get('epsilon')}")
    if "seed" in config:
        lines.append(f"Seed: {config['seed']}")
    if data.get("corpus_hash"):
        lines.append(f"Corpus hash: {data['corpus_hash']}")
    lines.append(f"Clips: {data.get('num_clips', 'unknown')}")
    if data.get("wall_clock_seconds") is not None:
        lines.append(f"Wall-clock: {data['wall_clock_seconds']:.1f} s")
    lines.append("")

    lines.append("Effectiveness:")
    for key, label in RATE_LABELS:
        if key in data:
            lines.append(f"  {label}: {_fmt(data[key], 3)}")
    lines.append("")

    lines.append("Imperceptibility (mean / std / median):")
    for name, stats in data.get("metrics", {}).items():
        lines.append(f"  {name}: {_fmt(stats.get('mean'))} / {_fmt(stats.get('std'))} / {_fmt(stats.get('median'))}")
    external = {k: v for k, v in data.get("external_metrics", {}).items() if v is not None}
    if external:
        lines.append("External metrics:")
        lines.append(_indent_block(json.dumps(external, indent=2, ensure_ascii=False), 2))
    lines.append("")

    for key, title in (("confusion_clean", "Confusion matrix, original clips"),
                       ("confusion_adv", "Confusion matrix, adversarial clips")):
        if data.get(key):
            lines.append(f"{title} (rows: true speaker):")
            lines.append(_indent_block("\n".join(_matrix_lines(data[key])), 2))
            lines.append("")

    return "\n".join(lines).rstrip() + "\n"


def json_report_to_text(report_path: Path) -> str:
    """Convert a ``summary.json`` file to a human readable string."""
    with open(report_path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return summary_to_text(data)
