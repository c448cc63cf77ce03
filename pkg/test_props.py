import pytest

from config import PropsConfig
from errors import GGLNError
from props import SUITES, run_props


class TestProps:

    @pytest.mark.parametrize('suite', sorted(SUITES))
    def test_suite_passes(self, suite):
        ok, rows = run_props(PropsConfig(suites=(suite,), instances=10))
        assert ok, rows[0]['detail']

    def test_unknown_suite(self):
        with pytest.raises(GGLNError):
            run_props(PropsConfig(suites=('nonsense',)))

    @pytest.mark.slow
    def test_all_suites_full_size(self):
        ok, rows = run_props(PropsConfig(instances=200))
        assert ok
        assert [r['suite'] for r in rows] == list(SUITES)
