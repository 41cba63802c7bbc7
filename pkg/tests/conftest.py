import numpy as np
import pytest

from fusionkit.data_model import DataTable, FusionSchema, ScaleLevel, Variable, VariableRole, stack
from fusionkit.recode import QuantileBin

COMMON, REC, DON = VariableRole.COMMON, VariableRole.SPECIFIC_RECIPIENT, VariableRole.SPECIFIC_DONOR


def small_schema(n_cat=2, n_metric=1, levels=(1, 2, 3), n_z=2):
    variables = [Variable(f"C{i}", COMMON, ScaleLevel.categorical(levels)) for i in range(n_cat)]
    variables += [Variable(f"M{i}", COMMON, ScaleLevel.metric(), QuantileBin(3)) for i in range(n_metric)]
    variables.append(Variable("Y", REC, ScaleLevel.metric()))
    variables += [Variable(f"Z{i}", DON, ScaleLevel.metric()) for i in range(n_z)]
    return FusionSchema(tuple(variables))


def random_blocks(rng, schema, n_rec, n_don, levels=(1, 2, 3)):
    """Recipient and donor tables with Z linear in the common variables plus noise."""
    common = schema.common
    n = n_rec + n_don
    cols = {}
    for v in common:
        if schema[v].scale.is_categorical:
            cols[v] = rng.choice(levels, size=n).astype(float)
        else:
            cols[v] = rng.normal(size=n)
    signal = sum(cols[v] * rng.normal() for v in common)
    cols["Y"] = signal + rng.normal(size=n)
    for z in schema.specific_donor:
        cols[z] = signal * rng.normal() + rng.normal(size=n)
    ids = np.arange(n)
    rec = DataTable({k: v[:n_rec] for k, v in cols.items() if k not in schema.specific_donor}, ids[:n_rec])
    don = DataTable({k: v[n_rec:] for k, v in cols.items() if k != "Y"}, ids[n_rec:])
    return rec, don


def random_frame(rng, schema, n_rec, n_don, levels=(1, 2, 3)):
    rec, don = random_blocks(rng, schema, n_rec, n_don, levels)
    return stack(rec, don, schema)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
