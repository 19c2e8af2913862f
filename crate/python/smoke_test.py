"""Smoke test for the wakeprobe Python extension.

Build and install first:
    pip install maturin && maturin develop -m crates/python/Cargo.toml
then run:
    python python/smoke_test.py
"""

import math
import pathlib

import wakeprobe

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"


def main() -> None:
    alexa = "AH0 L EH1 K S AH0"
    a_lesson = "AH L EH S AH N"

    assert math.isclose(wakeprobe.distance(alexa, a_lesson, wakeprobe.CostModel.unweighted()), 1 / 3, abs_tol=1e-9)
    simple = wakeprobe.CostModel.simple(1.46, 1.30, 0.24)
    al = wakeprobe.align(alexa, a_lesson, simple)
    assert math.isclose(al.distance, 0.25667, abs_tol=1e-5)
    assert (al.del_count, al.ins_count, al.sub_count) == (1, 1, 0)
    assert al.ops == ["=AH", "=L", "=EH", "-K", "=S", "=AH", "+N"]

    table = wakeprobe.WeightTable.load(str(FIXTURES / "weights.tsv"))
    advanced = wakeprobe.CostModel.advanced(1.46, 1.30, 0.24, table)
    assert advanced.variant == "advanced"
    assert wakeprobe.distance(alexa, alexa, advanced) == 0.0

    dictionary = wakeprobe.PronouncingDictionary.load(str(FIXTURES / "dict.txt"))
    assert "tomato" in dictionary and len(dictionary.lookup("tomato")) == 2
    ranked = wakeprobe.rank_dictionary(dictionary, "alexa", alexa, simple, k=5, seed=7)
    labels = [label for _, label, _ in ranked]
    assert len(ranked) == 5 and "alexa" not in labels and "aleksa" not in labels
    assert [r for r, _, _ in ranked] == [1, 2, 3, 4, 5]

    bigrams = wakeprobe.extract_ngrams("Hey, a lesson in fresh cheese.", 2, dictionary)
    assert ("a lesson", 1) in bigrams

    picks = {tuple(wakeprobe.select_top_k([0.1, 0.2, 0.2, 0.2, 0.3], 2, seed)) for seed in range(200)}
    assert picks == {(0, 1), (0, 2), (0, 3)}

    a = ["A"] * 45 + ["A"] * 5 + ["W"] * 5 + ["W"] * 45
    b = ["A"] * 45 + ["W"] * 5 + ["A"] * 5 + ["W"] * 45
    assert math.isclose(wakeprobe.cohens_kappa(a, b), 0.8, abs_tol=1e-9)
    assert wakeprobe.verification_window(100.0, 600.0) == (93.0, 103.0)
    assert [wakeprobe.bin_reproducibility(h) for h in (0, 3, 7, 10)] == ["none", "low", "medium", "high"]
    assert wakeprobe.classify_activation(1.99) == "local"
    assert wakeprobe.classify_activation(2.0) == "local_plus_cloud"

    print("wakeprobe smoke test passed")


if __name__ == "__main__":
    main()
