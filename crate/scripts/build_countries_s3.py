"""Build a Countries S3 split (locatedIn / neighborOf) from per-country JSON
records carrying `region`, `subregion` and `borders` (ISO alpha-3) fields,
such as the data directory of the `countryinfo` package.

    python3 scripts/build_countries_s3.py <countryinfo/data> data/countries_s3

Construction (Bouchard et al. 2015, S3 variant):
  * every country is locatedIn its subregion and its region, every subregion
    is locatedIn its region, neighborOf is the symmetric border relation;
  * 24 test and 24 validation countries are drawn at random among countries
    with at least one training-set neighbour;
  * test/valid countries lose all their locatedIn edges (S1 + S2);
  * neighbours of test/valid countries lose their locatedIn-region edge (S3);
  * test/valid triples are (country, locatedIn, region).
"""
import glob
import json
import os
import random
import sys

REGIONS = {"Africa", "Americas", "Asia", "Europe", "Oceania"}
# Records with missing fields in the source data.
PATCHES = {
    "HUN": {"region": "Europe", "subregion": "Eastern Europe",
            "borders": ["AUT", "SVK", "UKR", "ROU", "SRB", "HRV", "SVN"]},
}


def slug(name):
    out = []
    for ch in name.lower():
        out.append(ch if ch.isalnum() else "_")
    s = "".join(out)
    while "__" in s:
        s = s.replace("__", "_")
    return s.strip("_")


def main(src, dst, seed=1234, n_test=24, n_valid=24):
    countries = {}
    for path in sorted(glob.glob(os.path.join(src, "*.json"))):
        with open(path) as f:
            rec = json.load(f)
        code = (rec.get("ISO") or {}).get("alpha3")
        if not code:
            continue
        rec.update(PATCHES.get(code, {}))
        if rec.get("region") not in REGIONS or not rec.get("subregion") or "name" not in rec:
            continue
        countries[code] = {
            "name": slug(rec["name"]),
            "region": slug(rec["region"]),
            "subregion": slug(rec["subregion"]),
            "borders": set(rec.get("borders") or []),
        }
    neighbors = {c: set() for c in countries}
    for c, rec in countries.items():
        for b in rec["borders"]:
            if b in countries and b != c:
                neighbors[c].add(b)
                neighbors[b].add(c)
    keep = sorted(countries)

    rng = random.Random(seed)
    order = keep[:]
    rng.shuffle(order)
    held = set()
    test, valid = [], []
    for c in order:
        if len(test) == n_test and len(valid) == n_valid:
            break
        # Need a neighbour that stays in training and is not itself held out.
        if not any(n not in held and n != c for n in neighbors[c]):
            continue
        if any(all(m in held or m == c for m in neighbors[n]) for n in held if c in neighbors[n]):
            continue
        held.add(c)
        (test if len(test) < n_test else valid).append(c)

    name = lambda c: countries[c]["name"]
    train = []
    stripped_region = set()
    for c in held:
        stripped_region.update(n for n in neighbors[c] if n not in held)
    subregions = {}
    for c in keep:
        rec = countries[c]
        subregions[rec["subregion"]] = rec["region"]
        if c in held:
            continue
        train.append((name(c), "locatedIn", rec["subregion"]))
        if c not in stripped_region:
            train.append((name(c), "locatedIn", rec["region"]))
    for sub, reg in sorted(subregions.items()):
        train.append((sub, "locatedIn", reg))
    for c in keep:
        for n in sorted(neighbors[c]):
            train.append((name(c), "neighborOf", name(n)))

    os.makedirs(dst, exist_ok=True)
    with open(os.path.join(dst, "train.txt"), "w") as f:
        for t in train:
            f.write("\t".join(t) + "\n")
    for fname, group in (("test.txt", test), ("valid.txt", valid)):
        with open(os.path.join(dst, fname), "w") as f:
            for c in sorted(group, key=name):
                f.write("\t".join((name(c), "locatedIn", countries[c]["region"])) + "\n")
    ents = {h for h, _, _ in train} | {t for _, _, t in train}
    print(f"countries={len(keep)} subregions={len(subregions)} entities={len(ents)} "
          f"train={len(train)} test={len(test)} valid={len(valid)}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
