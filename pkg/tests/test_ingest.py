import io
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from selmeta.densities import Study
from selmeta.ingest import ParseError, convert_to_d, parse_dataset
from selmeta.stats_core import DomainError


def parse(text):
    return parse_dataset(io.StringIO(text))


class TestConvert:
    def test_null(self):
        s = convert_to_d(0.0, "t", 50)
        assert s.effect == 0.0 and s.se == pytest.approx(0.277350, abs=1e-6)

    def test_t(self):
        s = convert_to_d(2.0, "t", 50)
        assert s.effect == pytest.approx(0.4, abs=1e-15)
        assert s.se == pytest.approx(math.sqrt(4 / 52 + 0.16 / 104), abs=1e-15)
        assert s.se == pytest.approx(0.280110, abs=1e-6)

    @given(st.floats(0, 10), st.integers(1, 500))
    def test_f_equals_t_squared(self, t, df):
        a, b = convert_to_d(t * t, "F", df), convert_to_d(t, "t", df)
        assert a.effect == pytest.approx(b.effect, rel=1e-14, abs=1e-15)
        assert a.se == pytest.approx(b.se, rel=1e-14)

    def test_sign(self):
        assert convert_to_d(4.0, "F", 50, sign=-1).effect == pytest.approx(-0.4)

    @given(st.floats(-10, 10), st.floats(0.01, 5), st.integers(1, 500))
    def test_monotone(self, t, dt, df):
        assert convert_to_d(t + dt, "t", df).effect > convert_to_d(t, "t", df).effect

    @pytest.mark.parametrize("args", [(-1.0, "F", 10), (1.0, "t", 0.5), (1.0, "z", 10), (math.inf, "t", 10)])
    def test_errors(self, args):
        with pytest.raises(DomainError):
            convert_to_d(*args)


class TestParse:
    def test_effect_se(self):
        assert parse("effect,se\n0.62,0.2\n") == [Study(0.62, 0.2)]

    def test_t_row(self):
        assert parse("statistic,stat_type,df\n2.0,t,50\n")[0].effect == pytest.approx(0.4)

    def test_f_row(self):
        assert parse("statistic,stat_type,df\n4.0,F,50\n")[0] == convert_to_d(2.0, "t", 50)

    def test_sign_column(self):
        out = parse("statistic,stat_type,df,sign\n4.0,F,50,-\n4.0,F,50,\n")
        assert out[0].effect == pytest.approx(-0.4) and out[1].effect == pytest.approx(0.4)

    def test_comments_and_blanks(self):
        assert len(parse("# note\n\neffect,se\n# mid\n0.1,0.2\n\n0.3,0.1\n")) == 2

    def test_all_errors_reported_with_lines(self):
        text = "effect,se\n0.1,0.2\nabc,0.1\n0.2,-1\n0.3\n0.4,0.1\n"
        with pytest.raises(ParseError) as err:
            parse(text)
        assert [e.line for e in err.value.errors] == [3, 4, 5]
        assert "line 4" in str(err.value)

    def test_f_df_below_one(self):
        with pytest.raises(ParseError) as err:
            parse("statistic,stat_type,df\n4.0,F,0\n-1,F,10\n2,x,10\n")
        assert [e.line for e in err.value.errors] == [2, 3, 4]

    @pytest.mark.parametrize("text", ["", "# only comments\n", "a,b\n1,2\n", "effect,se\n"])
    def test_structural_errors(self, text):
        with pytest.raises(ParseError):
            parse(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            parse_dataset(tmp_path / "nope.csv")

    def test_unsupported_format(self):
        with pytest.raises(ParseError):
            parse_dataset(io.StringIO("effect,se\n1,1\n"), fmt="json")

    @given(st.text(alphabet=st.sampled_from(list("0123456789.,-e\nabF#t ")), max_size=60))
    def test_total(self, body):
        # any input yields a dataset or a structured error, nothing else
        try:
            out = parse("effect,se\n" + body)
        except ParseError as exc:
            assert exc.errors
        else:
            assert all(isinstance(s, Study) for s in out)
