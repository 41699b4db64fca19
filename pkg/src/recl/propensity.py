"""Propensity scores P(A = a | X): logistic / multinomial-logit fits or an external table."""

from __future__ import annotations

import csv
import io
import re
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cohort import Cohort

PS_CLIP = 1e-3
SEPARATION_NORM = 30.0
RIDGE = 1e-6

_TERM = re.compile(r"^\s*(?:(exp|log|sq)\(\s*([^()]+?)\s*\)|([^()]+?))\s*$")
_TRANSFORMS = {"exp": np.exp, "log": np.log, "sq": np.square}


class PropensityError(ValueError):
    pass


class PropensityConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Formula:
    """Regressors built from covariate columns.

    Terms are column indices or strings ``name``, ``exp(name)``, ``log(name)``,
    ``sq(name)`` where ``name`` is a covariate name or a 1-based ``x<j>``.
    No terms (or the string ``"all"``) means every covariate.
    """

    terms: tuple = ()

    @classmethod
    def parse(cls, spec: str | Sequence | None) -> "Formula":
        if spec is None:
            return cls(())
        if isinstance(spec, str):
            if spec.strip().lower() in ("", "all"):
                return cls(())
            spec = [s.strip() for s in spec.replace("+", ",").split(",") if s.strip()]
        return cls(tuple(spec))

    def columns(self, X: np.ndarray, names: Sequence[str] | None = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.terms:
            return X
        names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
        cols = []
        for term in self.terms:
            if isinstance(term, (int, np.integer)):
                cols.append(X[:, int(term)])
                continue
            m = _TERM.match(str(term))
            if not m:
                raise PropensityError(f"cannot parse formula term {term!r}")
            fn, inner, bare = m.groups()
            col = X[:, _resolve(inner or bare, names)]
            cols.append(_TRANSFORMS[fn](col) if fn else col)
        return np.column_stack(cols)

    def __str__(self):
        return " + ".join(str(t) for t in self.terms) if self.terms else "all covariates"


def _resolve(name: str, names: Sequence[str]) -> int:
    name = name.strip()
    if name in names:
        return list(names).index(name)
    m = re.fullmatch(r"[xX](\d+)", name)
    if m and 1 <= int(m.group(1)) <= len(names):
        return int(m.group(1)) - 1
    raise PropensityError(f"unknown covariate {name!r} in formula")


@dataclass(frozen=True)
class PsModel:
    kind: str  # "binary-logit" | "multinomial-logit" | "external-table"
    k: int
    coefficients: np.ndarray | None = None  # (k, d+1); row 0 is the reference arm
    formula: Formula = Formula()
    covariate_names: tuple[str, ...] | None = None
    table: dict | None = None
    reference: int = 0
    iterations: int = 0
    warnings: tuple[str, ...] = field(default=())

    def raw_probabilities(self, X=None, ids=None) -> np.ndarray:
        """Unclipped (n, K) probabilities."""
        if self.kind == "external-table":
            if ids is None:
                raise PropensityError("external propensity table requires subject ids")
            try:
                return np.array([self.table[str(i)] for i in ids], dtype=float)
            except KeyError as exc:
                raise PropensityError(f"subject {exc.args[0]} missing from propensity table") from None
        D = _with_intercept(self.formula.columns(X, self.covariate_names))
        return _softmax(D @ self.coefficients.T)

    def probabilities(self, X=None, ids=None) -> np.ndarray:
        """(n, K) probabilities clipped to [PS_CLIP, 1 - PS_CLIP] and renormalised."""
        return clip_probabilities(self.raw_probabilities(X, ids))

    def for_cohort(self, cohort: Cohort) -> np.ndarray:
        return self.probabilities(cohort.X, cohort.ids)


def clip_probabilities(P: np.ndarray, eps: float = PS_CLIP) -> np.ndarray:
    P = np.clip(P, eps, 1 - eps)
    return P / P.sum(axis=1, keepdims=True)


def _with_intercept(D: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((D.shape[0], 1)), D])


def _softmax(scores: np.ndarray) -> np.ndarray:
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=1, keepdims=True)


def _newton(loglik_grad_hess, beta0, ridge, max_iter, tol):
    beta = beta0.copy()
    ll, g, H = loglik_grad_hess(beta, ridge)
    trace = [ll]
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < tol:
            return beta, it - 1, trace
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        for _ in range(40):
            cand = beta + step
            new = loglik_grad_hess(cand, ridge)
            if np.isfinite(new[0]) and new[0] >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            step = step / 2
        beta = cand
        ll, g, H = new
        trace.append(ll)
    if np.max(np.abs(g)) < tol:
        return beta, max_iter, trace
    raise PropensityConvergenceError(f"logistic fit did not converge in {max_iter} iterations")


def _binary_objective(D, y):
    def f(beta, ridge):
        eta = D @ beta
        ll = float(np.sum(y * eta - np.logaddexp(0.0, eta))) - 0.5 * ridge * beta @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        g = D.T @ (y - mu) - ridge * beta
        H = (D * (mu * (1 - mu))[:, None]).T @ D + ridge * np.eye(D.shape[1])
        return ll, g, H

    return f


def _multinomial_objective(D, A, k):
    n, d = D.shape
    Y = np.eye(k)[A][:, 1:]

    def f(beta, ridge):
        B = beta.reshape(k - 1, d)
        scores = np.hstack([np.zeros((n, 1)), D @ B.T])
        lse = np.logaddexp.reduce(scores, axis=1)
        ll = float(np.sum(scores[np.arange(n), A] - lse)) - 0.5 * ridge * beta @ beta
        P = np.exp(scores - lse[:, None])[:, 1:]
        g = ((Y - P).T @ D).ravel() - ridge * beta
        H = np.empty((k - 1, d, k - 1, d))
        for a in range(k - 1):
            for b in range(k - 1):
                w = P[:, a] * ((a == b) - P[:, b])
                H[a, :, b, :] = (D * w[:, None]).T @ D
        H = H.reshape((k - 1) * d, (k - 1) * d) + ridge * np.eye((k - 1) * d)
        return ll, g, H

    return f


def fit_propensity(
    cohort: Cohort,
    formula: Formula | str | Sequence | None = None,
    *,
    multinomial: bool | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> PsModel:
    """Maximum-likelihood logit (K=2) or multinomial logit with arm 0 as reference.

    When the unpenalised coefficients exceed norm 30 (separation), the fit is
    redone with a 1e-6 ridge and a warning is recorded on the model.
    """
    if not isinstance(formula, Formula):
        formula = Formula.parse(formula)
    k = cohort.k
    if len(np.unique(cohort.A)) < 2:
        raise PropensityError("propensity model needs at least two observed arms")
    D = _with_intercept(formula.columns(cohort.X, cohort.covariate_names))
    if np.linalg.matrix_rank(D) < D.shape[1]:
        raise PropensityError("propensity design matrix is rank deficient")
    if multinomial is None:
        multinomial = k > 2
    if not multinomial and k != 2:
        raise PropensityError("binary logit requires exactly two arms")

    if multinomial:
        obj = _multinomial_objective(D, cohort.A, k)
        beta0 = np.zeros((k - 1) * D.shape[1])
        kind = "multinomial-logit"
    else:
        obj = _binary_objective(D, (cohort.A == 1).astype(float))
        beta0 = np.zeros(D.shape[1])
        kind = "binary-logit"

    notes = []
    try:
        beta, it, _ = _newton(obj, beta0, 0.0, max_iter, tol)
        separated = np.linalg.norm(beta) > SEPARATION_NORM
    except PropensityConvergenceError:
        separated = True
    if separated:
        msg = f"possible separation: refit with ridge {RIDGE:g}"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
        beta, it, _ = _newton(obj, beta0, RIDGE, max_iter, tol)

    coef = np.vstack([np.zeros(D.shape[1]), beta.reshape(k - 1, D.shape[1])])
    return PsModel(
        kind=kind,
        k=k,
        coefficients=coef,
        formula=formula,
        covariate_names=cohort.covariate_names,
        iterations=it,
        warnings=tuple(notes),
    )


def known_propensity(coefficients, formula=None, covariate_names=None) -> PsModel:
    """Wrap fixed logit coefficients (rows per arm, arm 0 reference) as a model."""
    coef = np.atleast_2d(np.asarray(coefficients, dtype=float))
    if np.any(coef[0] != 0):
        coef = coef - coef[0]
    if not isinstance(formula, Formula):
        formula = Formula.parse(formula)
    kind = "binary-logit" if coef.shape[0] == 2 else "multinomial-logit"
    names = tuple(covariate_names) if covariate_names is not None else None
    return PsModel(kind=kind, k=coef.shape[0], coefficients=coef, formula=formula, covariate_names=names)


def predict_ps(model: PsModel, x, a: int, subject_id=None) -> float:
    """Clipped probability of arm ``a`` for one covariate vector (or table row)."""
    if not 0 <= a < model.k:
        raise PropensityError(f"arm {a} outside 0..{model.k - 1}")
    if model.kind == "external-table":
        P = model.probabilities(ids=[subject_id])
    else:
        P = model.probabilities(np.atleast_2d(np.asarray(x, dtype=float)))
    return float(P[0, a])


def load_external_ps(text: str) -> PsModel:
    """Parse ``id,ps_0,...,ps_{K-1}`` into a table-backed model."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise PropensityError("empty propensity file") from None
    if header[0] != "id" or header[1:] != [f"ps_{j}" for j in range(len(header) - 1)]:
        raise PropensityError("propensity header must be id,ps_0,...,ps_{K-1}")
    k = len(header) - 1
    if k < 2:
        raise PropensityError("propensity table needs at least two arms")
    table = {}
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            probs = [float(v) for v in row[1:]]
        except ValueError:
            raise PropensityError(f"line {line}: non-numeric probability") from None
        if len(probs) != k:
            raise PropensityError(f"line {line}: expected {k} probabilities")
        if any(not 0 < q < 1 for q in probs):
            raise PropensityError(f"line {line}: probabilities must lie in (0, 1)")
        if abs(sum(probs) - 1) > 1e-6:
            raise PropensityError(f"line {line}: probabilities sum to {sum(probs):.6g}, not 1")
        table[row[0].strip()] = probs
    return PsModel(kind="external-table", k=k, table=table)


def export_ps_table(model: PsModel, cohort: Cohort) -> str:
    """Write unclipped per-subject probabilities in the external-table format."""
    P = model.raw_probabilities(cohort.X, cohort.ids)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", *(f"ps_{j}" for j in range(model.k))])
    for sid, row in zip(cohort.ids, P):
        w.writerow([sid, *(repr(float(q)) for q in row)])
    return buf.getvalue()
