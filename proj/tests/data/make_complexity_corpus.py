"""Regenerates complexity_corpus.tsv: random formulas and their sympy count_ops."""
import random

import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations, convert_xor

PRIMS = ["sin", "cos", "tanh", "exp", "log", "sqrt", "reciprocal", "sigmoid", "id", "sq", "cube"]
LOCALS = {
    "reciprocal": lambda u: 1 / u,
    "sigmoid": lambda u: 1 / (1 + sp.exp(-u)),
    "x_i0": sp.Symbol("x_i0"),
    "x_j0": sp.Symbol("x_j0"),
}


def num(rng):
    v = 0.0
    while abs(v) < 0.05 or abs(abs(v) - 1.0) < 0.05:
        v = round(rng.uniform(-3, 3), 4)
    return f"{v:.4f}"


def affine(rng, var):
    f = rng.choice(PRIMS)
    inner = var
    if rng.random() < 0.7:
        inner = f"{num(rng)}*{inner}"
    if rng.random() < 0.6:
        inner = f"{inner} + {num(rng)}"
    if f == "id":
        body = f"({inner})"
    elif f == "sq":
        body = f"({inner})^2"
    elif f == "cube":
        body = f"({inner})^3"
    else:
        body = f"{f}({inner})"
    if rng.random() < 0.7:
        body = f"{num(rng)}*{body}"
    if rng.random() < 0.5:
        body = f"{body} + {num(rng)}"
    return body


def poly(rng, var):
    terms = []
    for p in rng.sample([1, 2, 3], rng.randint(1, 3)):
        t = var if p == 1 else f"{var}^{p}"
        terms.append(f"{num(rng)}*{t}" if rng.random() < 0.8 else t)
    if rng.random() < 0.5:
        terms.append(num(rng))
    return " + ".join(terms)


def formula(rng):
    kind = rng.randint(0, 5)
    x = rng.choice(["x_i0", "x_j0"])
    if kind == 0:
        return affine(rng, x)
    if kind == 1:
        return " + ".join(affine(rng, rng.choice(["x_i0", "x_j0"])) for _ in range(rng.randint(2, 3)))
    if kind == 2:
        return f"({affine(rng, 'x_i0')})*({affine(rng, 'x_j0')})"
    if kind == 3:
        return poly(rng, x)
    if kind == 4:
        return f"{num(rng)}*sin({num(rng)}*x_i0 + {num(rng)}*x_j0 + {num(rng)})"
    return f"({poly(rng, 'x_i0')})*({poly(rng, 'x_j0')})"


def main():
    rng = random.Random(20240601)
    tr = standard_transformations + (convert_xor,)
    rows = []
    while len(rows) < 400:
        text = formula(rng).replace("+ -", "- ")
        try:
            e = parse_expr(text, local_dict=LOCALS, transformations=tr)
        except Exception:
            continue
        if e.has(sp.I) or e.has(sp.zoo) or e.has(sp.nan):
            continue
        rows.append((text, int(sp.count_ops(e))))
    with open("complexity_corpus.tsv", "w") as out:
        out.write("# formula\tcount_ops (sympy %s)\n" % sp.__version__)
        for text, c in rows:
            out.write(f"{text}\t{c}\n")


if __name__ == "__main__":
    main()
