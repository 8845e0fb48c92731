#!/usr/bin/env python3
"""Regenerates the bundled synthetic fixtures.

Output is deterministic (fixed seeds); rerun after editing the templates:

    python3 fixtures/generate.py
"""

import json
import os
import random
import shutil

HERE = os.path.dirname(os.path.abspath(__file__))
SECTIONS = ["Intervention", "Eligibility", "Results", "Adverse Events"]


def write_corpus(root, instances, ctrs):
    if os.path.exists(root):
        shutil.rmtree(root)
    os.makedirs(os.path.join(root, "ctrs"))
    with open(os.path.join(root, "instances.json"), "w") as f:
        json.dump(instances, f, indent=2, sort_keys=True)
        f.write("\n")
    for tid, rec in ctrs.items():
        with open(os.path.join(root, "ctrs", tid + ".json"), "w") as f:
            json.dump(rec, f, indent=2)
            f.write("\n")


# ---------------------------------------------------------------------------
# 60-instance mini corpus over 12 trials
# ---------------------------------------------------------------------------

DRUGS = ["letrozole", "anastrozole", "tamoxifen", "paclitaxel", "docetaxel", "trastuzumab",
         "capecitabine", "exemestane", "lapatinib", "fulvestrant", "everolimus", "palbociclib"]


def mini_ctr(i, rng):
    drug = DRUGS[i]
    dose = rng.choice([2.5, 20, 50, 75, 100, 175, 500, 1000])
    weeks = rng.choice([2, 3, 4, 6, 12, 24])
    age_lo = rng.choice([18, 21, 35, 40])
    age_hi = rng.choice([65, 70, 75, 80])
    pfs = rng.choice([6.2, 8.4, 11.0, 14.5, 18.3])
    ae = rng.randint(3, 40)
    n = rng.randint(40, 400)
    return {
        "Clinical Trial ID": "NCT%08d" % (i + 1),
        "Intervention": [
            "INTERVENTION 1: ",
            "  %s arm" % drug.capitalize(),
            "  Patients receive %s %s mg orally once daily for %d weeks." % (drug, dose, weeks),
            "  Treatment is given IV on day 1 of each cycle when combined with chemotherapy.",
        ],
        "Eligibility": [
            "Inclusion Criteria:",
            "  Women aged %d to %d years with histologically confirmed breast cancer." % (age_lo, age_hi),
            "  ER positive or PR positive disease by local assessment.",
            "  BMI below 35 at screening.",
            "Exclusion Criteria:",
            "  Prior treatment with %s within 12 months." % drug,
        ],
        "Results": [
            "Outcome Measurement: ",
            "  Progression-free survival (PFS)",
            "  Time frame: %d weeks" % (weeks * 4),
            "Results 1: ",
            "  Arm/Group Title: %s" % drug.capitalize(),
            "  Overall Number of Participants Analyzed: %d" % n,
            "  Median (95% Confidence Interval)",
            "  Unit of Measure: months  %s" % pfs,
        ],
        "Adverse Events": [
            "Adverse Events 1:",
            "  Total: %d/%d (%.2f%%)" % (ae, n, 100.0 * ae / n),
            "  Neutropenia 1/%d (%.2f%%)" % (n, 100.0 / n),
            "  Fatigue 2/%d (%.2f%%)" % (n, 200.0 / n),
        ],
    }, dict(drug=drug, dose=dose, weeks=weeks, age_lo=age_lo, age_hi=age_hi, pfs=pfs, ae=ae, n=n)


def single_statement(section, facts, entail, rng):
    d = facts
    if section == "Intervention":
        if entail:
            return "Patients in the primary trial receive %s mg of %s daily." % (d["dose"], d["drug"])
        return "Patients in the primary trial receive %s at a lower dose than 5 mg." % d["drug"]
    if section == "Eligibility":
        if entail:
            return "Patients aged %d to %d years with ER positive tumors are eligible." % (d["age_lo"], d["age_hi"])
        return "Patients younger than %d years are eligible for the primary trial." % (d["age_lo"] - 1)
    if section == "Results":
        if entail:
            return "The median PFS in the primary trial was %s months." % d["pfs"]
        return "The median PFS in the primary trial was more than %s months." % (d["pfs"] + 10)
    if entail:
        return "At least one patient in the primary trial reported an AE."
    return "No AE was recorded in the primary trial."


def comparison_statement(section, a, b, entail, rng):
    if section == "Intervention":
        higher = a["dose"] > b["dose"]
        word = "higher" if higher == entail else "lower"
        if a["dose"] == b["dose"]:
            return ("Both trials use the same daily dose of %s mg." % a["dose"]) if entail else \
                "The primary trial uses a higher daily dose than the secondary trial."
        return "The primary trial uses a %s daily dose than the secondary trial." % word
    if section == "Eligibility":
        older = a["age_hi"] > b["age_hi"]
        if a["age_hi"] == b["age_hi"]:
            return ("Both trials enrol women up to %d years of age." % a["age_hi"]) if entail else \
                "The primary trial enrols older patients than the secondary trial."
        word = "older" if older == entail else "younger"
        return "The primary trial enrols %s patients than the secondary trial." % word
    if section == "Results":
        longer = a["pfs"] > b["pfs"]
        if a["pfs"] == b["pfs"]:
            return ("Both trials report the same median PFS of %s months." % a["pfs"]) if entail else \
                "The primary trial reports a longer median PFS than the secondary trial."
        word = "longer" if longer == entail else "shorter"
        return "The primary trial reports a %s median PFS than the secondary trial." % word
    more = a["ae"] > b["ae"]
    if a["ae"] == b["ae"]:
        return ("Both trials recorded %d patients with an AE." % a["ae"]) if entail else \
            "The primary trial recorded more patients with an AE than the secondary trial."
    word = "more" if more == entail else "fewer"
    return "The primary trial recorded %s patients with an AE than the secondary trial." % word


def build_mini():
    rng = random.Random(20240601)
    ctrs, facts = {}, {}
    for i in range(12):
        rec, f = mini_ctr(i, rng)
        tid = rec["Clinical Trial ID"]
        ctrs[tid] = rec
        facts[tid] = f
    tids = sorted(ctrs)
    instances = {}
    k = 0
    # 36 single + 24 comparison = 60; labels balanced within each type.
    for j in range(36):
        tid = tids[j % 12]
        section = SECTIONS[j % 4]
        entail = (j // 4) % 2 == 0
        uuid = "mini-%04d" % k
        instances[uuid] = {
            "Type": "Single",
            "Section_id": section,
            "Primary_id": tid,
            "Statement": single_statement(section, facts[tid], entail, rng),
            "Label": "Entailment" if entail else "Contradiction",
        }
        k += 1
    for j in range(24):
        a = tids[j % 12]
        b = tids[(j + 5) % 12]
        section = SECTIONS[(j + 1) % 4]
        entail = (j // 2) % 2 == 0
        uuid = "mini-%04d" % k
        instances[uuid] = {
            "Type": "Comparison",
            "Section_id": section,
            "Primary_id": a,
            "Secondary_id": b,
            "Statement": comparison_statement(section, facts[a], facts[b], entail, rng),
            "Label": "Entailment" if entail else "Contradiction",
        }
        k += 1
    # Eight of the instances are intervention variants of earlier ones.
    links = []
    variants = [
        ("mini-0040", "mini-0000", "Paraphrase"),
        ("mini-0041", "mini-0001", "Paraphrase"),
        ("mini-0042", "mini-0002", "Definitions"),
        ("mini-0043", "mini-0003", "Numerical_paraphrase"),
        ("mini-0044", "mini-0004", "Contradiction"),
        ("mini-0045", "mini-0005", "Contradiction"),
        ("mini-0046", "mini-0008", "Numerical_contradiction"),
        ("mini-0047", "mini-0009", "Text_appended"),
    ]
    preserving = {"Paraphrase", "Definitions", "Numerical_paraphrase", "Text_appended"}
    for uuid, src, kind in variants:
        base = instances[src]
        inst = dict(base)
        inst["Intervention"] = kind
        if kind in preserving:
            inst["Label"] = base["Label"]
            if kind == "Text_appended":
                inst["Statement"] = base["Statement"] + " This was reported in the trial summary."
            elif kind == "Definitions":
                inst["Statement"] = base["Statement"].replace("PFS", "progression-free survival (PFS)")
            else:
                inst["Statement"] = "It is the case that " + base["Statement"][0].lower() + base["Statement"][1:]
        else:
            inst["Label"] = "Contradiction" if base["Label"] == "Entailment" else "Entailment"
            inst["Statement"] = "It is not the case that " + base["Statement"][0].lower() + base["Statement"][1:]
        instances[uuid] = inst
        links.append({"uuid": uuid, "source_uuid": src, "kind": kind})
    root = os.path.join(HERE, "nli4ct_mini")
    write_corpus(root, instances, ctrs)
    with open(os.path.join(root, "interventions.jsonl"), "w") as f:
        for link in links:
            f.write(json.dumps(link, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Cue-word corpora for trainer tests
# ---------------------------------------------------------------------------

FILLER = ("patients cohort trial arm dose treatment week month response survival tumor therapy "
          "baseline median follow analysis group outcome rate event safety efficacy daily cycle "
          "protocol enrolment screening visit infusion regimen primary secondary endpoint interval "
          "measure participants control placebo sample clinic assessment report duration status").split()
ENTAIL_CUES = "consistent confirmed supported matched documented".split()
CONTRA_CUES = "refuted absent excluded denied contrary".split()


def build_cue_corpus(name, n, noise_frac, seed):
    rng = random.Random(seed)
    ctrs = {}
    n_trials = 10
    for t in range(n_trials):
        tid = "SYN%04d" % t
        rec = {"Clinical Trial ID": tid}
        for s in SECTIONS:
            rec[s] = [" ".join(rng.choice(FILLER) for _ in range(8)) for _ in range(2)]
        ctrs[tid] = rec
    instances = {}
    noisy = []
    n_noisy = int(round(n * noise_frac))
    noisy_idx = set(rng.sample(range(n), n_noisy))
    for i in range(n):
        entail = i % 2 == 0
        cues = ENTAIL_CUES if entail else CONTRA_CUES
        words = [rng.choice(FILLER) for _ in range(5)] + rng.sample(cues, 2)
        rng.shuffle(words)
        label = "Entailment" if entail else "Contradiction"
        uuid = "%s-%04d" % (name, i)
        if i in noisy_idx:
            label = "Contradiction" if entail else "Entailment"
            noisy.append(uuid)
        instances[uuid] = {
            "Type": "Single",
            "Section_id": SECTIONS[i % 4],
            "Primary_id": "SYN%04d" % (i % n_trials),
            "Statement": " ".join(words),
            "Label": label,
        }
    root = os.path.join(HERE, name)
    write_corpus(root, instances, ctrs)
    if noise_frac > 0:
        with open(os.path.join(root, "noise.json"), "w") as f:
            json.dump(sorted(noisy), f, indent=2)
            f.write("\n")


if __name__ == "__main__":
    build_mini()
    build_cue_corpus("separable40", 40, 0.0, 7)
    build_cue_corpus("noisy200", 200, 0.2, 11)
