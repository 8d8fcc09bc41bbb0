import pytest

from augmixcloak.augmentation import AugIntensity
from augmixcloak.tuner import SWEEP_HEADER, SearchSpace, deviation, search_defense_params

INTENSITIES = (AugIntensity((0, 1), (0.7, 0.3)), AugIntensity((1, 2), (0.5, 0.5)), AugIntensity((2, 3), (0.2, 0.8)))


def test_unique_optimum():
    target = (0.7, INTENSITIES[1])

    def evaluate(cfg):
        if (cfg.alpha, cfg.intensity) == target:
            return (0.5, 0.5, 0.5, 0.5)
        return (0.7, 0.6, 0.66, 0.61)

    result = search_defense_params(SearchSpace(candidate_intensities=INTENSITIES), evaluate)
    assert (result.best.alpha, result.best.intensity) == target
    assert result.deviation == 0.0 and result.in_range


def test_convex_in_alpha():
    def evaluate(cfg):
        f = 0.5 + 2 * (cfg.alpha - 0.6) ** 2 + 0.01 * cfg.intensity.expected_count
        return (f, f, f, f)

    space = SearchSpace(candidate_intensities=INTENSITIES)
    result = search_defense_params(space, evaluate)
    assert abs(result.best.alpha - 0.6) <= space.alpha_step / 2 + 1e-12
    assert result.best.intensity.expected_count < INTENSITIES[0].expected_count


def test_out_of_range_fallback():
    def evaluate(cfg):
        return (0.9, 0.5 + cfg.alpha / 10, 0.5, 0.5)

    result = search_defense_params(SearchSpace(candidate_intensities=INTENSITIES), evaluate)
    assert result.out_of_range
    # each refinement round moves half a grid step further below the lowest alpha
    assert result.best.alpha == 0.35


def test_grid_size_and_cache():
    calls = []

    def evaluate(cfg):
        calls.append(cfg)
        return (0.6, 0.6, 0.6, 0.6)

    space = SearchSpace(candidate_intensities=INTENSITIES)
    result = search_defense_params(space, evaluate)
    assert len(calls) == len(result.evaluations) >= 15
    assert len({(c.alpha, c.intensity) for c in calls}) == len(calls)


def test_deterministic():
    def evaluate(cfg):
        return (cfg.alpha, 1 - cfg.alpha, 0.5, 0.4 + cfg.intensity.expected_count / 10)

    space = SearchSpace(candidate_intensities=INTENSITIES)
    a, b = search_defense_params(space, evaluate), search_defense_params(space, evaluate)
    assert a.to_dict() == b.to_dict() and a.sweep_csv() == b.sweep_csv()


def test_sweep_csv_header():
    result = search_defense_params(SearchSpace(alpha_grid=(0.8,), candidate_intensities=INTENSITIES[:1]),
                                   lambda cfg: (0.5, 0.5, 0.6, 0.4))
    lines = result.sweep_csv().splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER)
    assert lines[1].startswith("tune-grid,alpha=0.8000 n=[0 1] w=[0.7000 0.3000],,,0.5000")


def test_rejects_bad_evaluate():
    with pytest.raises(ValueError):
        search_defense_params(SearchSpace(candidate_intensities=INTENSITIES), lambda cfg: (0.5, 0.5))


@pytest.mark.parametrize("kwargs", [{"alpha_grid": ()}, {"candidate_intensities": ()}, {"alpha_grid": (0.9, 0.5)}])
def test_invalid_space(kwargs):
    with pytest.raises(ValueError):
        SearchSpace(**kwargs)


def test_deviation():
    assert deviation((0.4, 0.6, 0.5, 0.9)) == pytest.approx(0.15)
