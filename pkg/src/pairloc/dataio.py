"""Dataset interchange format: JSON Lines, one bag per line.

    {"id": ..., "labels": [...], "proposals": [
        {"features": [...], "features_generic": [... optional],
         "box": [x1, y1, x2, y2] (optional), "gt_class": ... (optional),
         "is_full_image": true (optional)}]}

Floats are written with repr-style precision, so a round trip preserves
every numeric value exactly.
"""

import json
from typing import Optional

from .data import Bag, DataError, Dataset, Proposal


class SchemaError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _proposal_to_dict(p: Proposal) -> dict:
    out = {"features": p.features.tolist()}
    if p.features_generic is not None:
        out["features_generic"] = p.features_generic.tolist()
    if p.box is not None:
        out["box"] = list(p.box)
    if p.gt_class is not None:
        out["gt_class"] = p.gt_class
    if p.is_full_image:
        out["is_full_image"] = True
    return out


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for bag in dataset.bags:
            row = {
                "id": bag.id,
                "labels": sorted(bag.labels),
                "proposals": [_proposal_to_dict(p) for p in bag.proposals],
            }
            fh.write(json.dumps(row) + "\n")


def load_dataset(path, classes=None) -> Dataset:
    bags = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(row, dict) or "id" not in row:
                raise SchemaError(lineno, "bag object with an 'id' expected")
            props = row.get("proposals")
            if not isinstance(props, list) or not props:
                raise SchemaError(lineno, "non-empty 'proposals' list expected")
            proposals = []
            for k, pd in enumerate(props):
                if "features" not in pd:
                    raise SchemaError(lineno, f"proposal {k} is missing 'features'")
                try:
                    proposals.append(Proposal(
                        features=pd["features"],
                        features_generic=pd.get("features_generic"),
                        box=tuple(pd["box"]) if pd.get("box") is not None else None,
                        gt_class=pd.get("gt_class"),
                        is_full_image=bool(pd.get("is_full_image", False)),
                    ))
                except (DataError, TypeError, ValueError) as exc:
                    raise SchemaError(lineno, f"proposal {k}: {exc}") from exc
            try:
                bags.append(Bag(row["id"], proposals, row.get("labels", [])))
            except DataError as exc:
                raise SchemaError(lineno, str(exc)) from exc
    try:
        return Dataset(bags, classes=classes)
    except DataError as exc:
        raise SchemaError(0, str(exc)) from exc


def save_selections(selections, path) -> None:
    blob = {cls: dict(sorted(sel.chosen.items()))
            for cls, sel in sorted(selections.items())}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)


def load_selections(path):
    from .data import Selection
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    return {cls: Selection(cls, {k: int(v) for k, v in chosen.items()})
            for cls, chosen in blob.items()}
