"""Shared test utilities: random instances, loss maps, data synthesis,
and a strict validator for the DOT subset the exporter emits."""

import re

from iggl import ColumnLoss, GraphPattern, make_loss, make_precision, robust_scale, sample_gaussian, sample_glm

ALL_KINDS = (
    "quadratic",
    "bernoulli",
    "huber",
    "tukey",
    "hampel",
    "huberized_hinge",
    "lorenz",
    "poisson_reparam",
)


def rand_spd(m, rng, rows=None):
    """Well-conditioned random SPD cross-product matrix."""
    rows = rows or m + 5
    A = rng.standard_normal((rows, m))
    S = A.T @ A / rows
    return 0.5 * (S + S.T)


def loss_map_for(kind, Y):
    """Per-column losses of one kind, with MAD-based cutoffs where needed."""
    out = []
    for k in range(Y.shape[1]):
        y = Y[:, k]
        if kind == "huber":
            out.append(make_loss("huber", c=1.345 * robust_scale(y)))
        elif kind == "tukey":
            out.append(make_loss("tukey", c=4.685 * robust_scale(y)))
        elif kind == "hampel":
            s = robust_scale(y)
            out.append(make_loss("hampel", a=2 * s, b=4 * s, c=8 * s))
        elif kind == "poisson_reparam":
            out.append(ColumnLoss("poisson_reparam", {}))
        else:
            out.append(make_loss(kind))
    return tuple(out)


def synth_data(kind, m, n, seed, mu=0.0):
    """Data matching a loss kind's domain, from a chain ground truth."""
    W_star = make_precision(GraphPattern("chain", m))
    if kind == "bernoulli":
        return sample_glm(n, W_star, "bernoulli", mu=mu, seed=seed)
    if kind == "poisson_reparam":
        return sample_glm(n, W_star, "poisson", mu=0.5, seed=seed)
    if kind in ("huberized_hinge", "lorenz"):
        return 2.0 * sample_glm(n, W_star, "bernoulli", mu=mu, seed=seed) - 1.0
    return sample_gaussian(n, W_star, mu=mu, seed=seed)


_DOT_ID = re.compile(r'^"(?:[^"\\]|\\.)*"$')
_DOT_ATTR = re.compile(r"^\[weight=([^\]\s]+)\]$")


def _dot_unquote(ident):
    return re.sub(r"\\(.)", r"\1", ident[1:-1])


def check_dot_grammar(text):
    """Validate the undirected-graph DOT subset produced by the exporter.

    Grammar: 'graph { (node_stmt | edge_stmt)* }' where node_stmt is a
    quoted identifier and edge_stmt is 'id -- id [weight=float];'.  Returns
    (nodes, edges) on success, raises AssertionError otherwise.
    """
    lines = [ln.strip() for ln in text.strip().splitlines()]
    assert lines[0] == "graph {", f"bad header: {lines[0]!r}"
    assert lines[-1] == "}", f"bad footer: {lines[-1]!r}"
    nodes, edges = [], []
    for ln in lines[1:-1]:
        assert ln.endswith(";"), f"statement missing ';': {ln!r}"
        body = ln[:-1].strip()
        if " -- " in body:
            rest = body.split(" -- ", 1)
            lhs = rest[0].strip()
            rhs_attr = rest[1].rsplit(" ", 1)
            assert len(rhs_attr) == 2, f"edge missing attributes: {ln!r}"
            rhs, attr = rhs_attr[0].strip(), rhs_attr[1].strip()
            assert _DOT_ID.match(lhs), f"bad node id: {lhs!r}"
            assert _DOT_ID.match(rhs), f"bad node id: {rhs!r}"
            mo = _DOT_ATTR.match(attr)
            assert mo, f"bad attribute list: {attr!r}"
            float(mo.group(1))
            edges.append((_dot_unquote(lhs), _dot_unquote(rhs)))
        else:
            assert _DOT_ID.match(body), f"bad node statement: {body!r}"
            nodes.append(_dot_unquote(body))
    return nodes, edges
