import numpy as np
import pytest

from feedcap.verify import (
    SUITES,
    cauchy_binet_det,
    gram_forms_suite,
    lemma1_suite,
    limit_identity_suite,
    run_suite,
)


def test_cauchy_binet_against_slogdet():
    rng = np.random.default_rng(0)
    d1, d2 = rng.standard_normal(9), rng.standard_normal(9)
    D = np.column_stack([d1, d2])
    assert np.isclose(cauchy_binet_det(d1, d2), np.linalg.det(np.eye(2) + D.T @ D), rtol=1e-12)


def test_lemma1_suite():
    res = lemma1_suite()
    assert res.passed and res.metrics["max_abs_error"] < 1e-9 and res.metrics["cases"] == 500


def test_limit_identity_suite():
    res = limit_identity_suite()
    assert res.passed
    assert res.metrics["cases"] == 10
    assert res.metrics["max_richardson_error"] < 1e-8


def test_gram_forms_suite():
    res = gram_forms_suite()
    assert res.passed and res.metrics["cases"] == 20 and res.metrics["max_rel_error"] < 1e-8


def test_run_suite_all_and_unknown():
    assert [r.name for r in run_suite("all")] == list(SUITES)
    with pytest.raises(KeyError):
        run_suite("nope")
