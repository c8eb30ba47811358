"""Smoke test for the household_tom extension module.

Build and install first:
    pip install --no-build-isolation ./crates/py
"""

import json
import math

import household_tom as htom


def main():
    data = htom.generate(seed=42, scenarios=23, per_type=30)
    assert (data.scenario_count, data.question_count) == (23, 90), data
    again = htom.generate(seed=42, scenarios=23, per_type=30)
    assert again.to_jsonl() == data.to_jsonl()

    scorer = htom.OracleScorer()
    questions = data.questions()
    right = 0
    for q in questions[:30]:
        p = scorer.predict(q)
        assert abs(sum(p["posterior"]) - 1.0) < 1e-9
        right += p["chosen"] == q["key"]
    assert right == 30, right

    showcase = htom.showcase_questions()
    chosen = [scorer.predict(q)["chosen"] for q in showcase]
    assert chosen[:3] == [0, 1, 2], chosen
    potato = scorer.posterior(showcase[3])
    assert max(potato["posterior"]) == potato["posterior"][1]

    fused = htom.fuse(showcase[0]["text_channel"], showcase[0]["observation_channel"])
    assert fused["initial_state"]["placements"]["beer"] == "coffee_table"

    grab = {"verb": "grab", "object": "carrot", "from": "fridge"}
    put = {"verb": "put", "object": "carrot", "to": "kitchen_table"}
    assert htom.retrieve_initial_state([grab, put]) == {"carrot": "fridge"}

    p = htom.boltzmann([-1.0, -2.0, -3.0], 2.0)
    assert abs(sum(p) - 1.0) < 1e-12 and p[0] > p[1] > p[2]
    assert htom.choose("least", [0.7, 0.2, 0.1]) == (2, False)
    assert htom.boltzmann([-1.0, -1.0], math.inf) == [0.5, 0.5]

    preds = "\n".join(json.dumps(scorer.predict(q)) for q in questions)
    report = htom.evaluate(data.to_jsonl(), preds)
    assert report["correct"] == report["total"] == 90, report
    print("smoke ok:", data, report["overall"])


if __name__ == "__main__":
    main()
