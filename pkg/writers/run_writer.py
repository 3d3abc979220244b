"""
Run artifact writer
All files are plain delimited text with fixed float formatting so identical
runs produce byte-identical files. Timings never go into these files.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from config import RerankConfig
from domain_model import CandidateSet, ObjectiveEvaluator, ObjectiveVector, SolutionList, UserId
from error_handling import DataError, handle_exceptions
from pareto_net import save_checkpoint
from reranker_base import RerankResult, order_by_score

FINAL_LISTS = "final_lists.tsv"
FRONTS = "fronts.tsv"
ANCHORS = "anchors.tsv"
EXAMPLES = "examples.tsv"
HV_TRACE = "hypervolume_trace.csv"
LOSS_TRACE = "loss_trace.csv"
CHECKPOINT = "scorer_checkpoint.txt"


def _items(items: SolutionList) -> str:
    return "|".join(str(i) for i in items)


def _objectives(obj: ObjectiveVector) -> List[str]:
    return [f"{obj.acc:.6f}", f"{obj.div:.6f}", f"{obj.nov:.6f}"]


def read_final_lists(path) -> Dict[UserId, SolutionList]:
    """Default list per user from a final_lists.tsv file"""
    path = Path(path)
    lists: Dict[UserId, SolutionList] = {}
    try:
        with open(path, 'r', encoding='utf-8') as f:
            reader = csv.DictReader(f, delimiter="\t")
            for row in reader:
                if row["default"] == "1":
                    lists[int(row["user"])] = tuple(int(i) for i in row["items"].split("|"))
    except (OSError, KeyError, ValueError) as e:
        raise DataError(f"Cannot read final lists from {path}: {e}", path=str(path)) from e
    if not lists:
        raise DataError(f"No default lists in {path}", path=str(path))
    return lists


class RunWriter:
    """Writes the artifacts of one re-ranking run into an output directory"""

    def __init__(self, config: RerankConfig, out_dir=None):
        self.config = config
        self.out_dir = Path(out_dir or config.run.output_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.logger = logging.getLogger(self.__class__.__name__)

    def _write(self, name: str, header: List[str], rows, delimiter: str = "\t") -> Path:
        path = self.out_dir / name
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, delimiter=delimiter, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        self.logger.debug(f"Wrote {path}")
        return path

    def write_final_lists(self, result: RerankResult, candidates: Mapping[UserId, CandidateSet],
                          evaluator: ObjectiveEvaluator) -> Path:
        """One row per (user, region) pick; the default pick is flagged"""
        order = self.config.selection.order_by_base_score
        rows = []
        for user in sorted(result.lists):
            cand = candidates[user]
            selection = result.selections.get(user)
            if selection is None:
                items = result.lists[user]
                rows.append([user, "-", 1, _items(items), *_objectives(evaluator.evaluate(items, cand))])
                continue
            for cluster in sorted(selection.per_cluster):
                ind = selection.per_cluster[cluster]
                items = result.lists[user] if cluster == selection.default_cluster else ind.items
                if order and cluster != selection.default_cluster:
                    items = order_by_score(items, cand)
                rows.append([user, cluster, int(cluster == selection.default_cluster), _items(items),
                             *_objectives(ind.objectives)])
        return self._write(FINAL_LISTS, ["user", "lambda", "default", "items", "acc", "div", "nov"], rows)

    def write_fronts(self, result: RerankResult) -> Path:
        rows = [[user, idx, _items(ind.items), *_objectives(ind.objectives)]
                for user in sorted(result.fronts)
                for idx, ind in enumerate(result.fronts[user])]
        return self._write(FRONTS, ["user", "index", "items", "acc", "div", "nov"], rows)

    def write_anchors(self, result: RerankResult) -> Path:
        rows = [[user, a.cluster, _items(a.items), *_objectives(a.objectives)]
                for user in sorted(result.anchors)
                for a in result.anchors[user].anchors]
        return self._write(ANCHORS, ["user", "lambda", "items", "acc", "div", "nov"], rows)

    @handle_exceptions(default_return=None)
    def write_examples(self, result: RerankResult) -> Optional[Path]:
        """Debug dump of every transfer round's preference examples"""
        rows = [[g, ex.user, ex.cluster, ex.item, f"{ex.label:.9f}", " ".join(f"{x:.6f}" for x in ex.features)]
                for g, examples in result.examples
                for ex in examples]
        return self._write(EXAMPLES, ["generation", "user", "lambda", "item", "label", "features"], rows)

    def write_hv_trace(self, result: RerankResult) -> Path:
        rows = [[g, f"{hv:.6f}"] for g, hv in result.hv_trace]
        return self._write(HV_TRACE, ["generation", "mean_hypervolume"], rows, delimiter=",")

    def write_loss_trace(self, result: RerankResult) -> Path:
        rows = [[g, epoch, f"{loss:.6f}"] for g, epoch, loss in result.loss_trace]
        return self._write(LOSS_TRACE, ["generation", "epoch", "loss"], rows, delimiter=",")

    def write_all(self, result: RerankResult, candidates: Mapping[UserId, CandidateSet],
                  evaluator: ObjectiveEvaluator) -> List[Path]:
        """Every artifact the result carries"""
        paths = [self.write_final_lists(result, candidates, evaluator)]
        if result.fronts:
            paths.append(self.write_fronts(result))
            paths.append(self.write_hv_trace(result))
            paths.append(self.write_loss_trace(result))
        if result.anchors and self.config.transfer.dump_anchors:
            paths.append(self.write_anchors(result))
        if result.examples:
            path = self.write_examples(result)
            if path is not None:
                paths.append(path)
        if result.params is not None:
            paths.append(save_checkpoint(result.params, self.out_dir / CHECKPOINT))
        self.logger.info(f"Wrote {len(paths)} run artifacts to {self.out_dir}")
        return paths
