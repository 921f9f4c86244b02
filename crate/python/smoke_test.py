"""Smoke test for the Python bindings.

Build first with `cargo build -p sandwich-py` (or `--release`), then run
`python3 python/smoke_test.py`. Set SANDWICH_PY_LIB to point at a specific
shared library.
"""

import importlib.util
import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def find_library():
    if os.environ.get("SANDWICH_PY_LIB"):
        return os.environ["SANDWICH_PY_LIB"]
    for profile in ("release", "debug"):
        for name in ("libsandwich_py.so", "libsandwich_py.dylib", "sandwich_py.dll"):
            path = os.path.join(ROOT, "target", profile, name)
            if os.path.exists(path):
                return path
    sys.exit("shared library not found; run `cargo build -p sandwich-py` first")


def load():
    tmp = tempfile.mkdtemp()
    ext = ".pyd" if sys.platform == "win32" else ".so"
    target = os.path.join(tmp, "sandwich_py" + ext)
    shutil.copy(find_library(), target)
    spec = importlib.util.spec_from_file_location("sandwich_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def close(a, b, tol=1e-7):
    return abs(a - b) <= tol


def main():
    sw = load()

    # three atoms, expectation on span{1, (1, 0, -1)}, densities in [0.5, 2]
    space = sw.FilteredSpace([1 / 3, 1 / 3, 1 / 3], [[[0, 1, 2]], [[0], [1], [2]]])
    op = sw.PolyhedralOperator(space, 0, 1, [([1, 1, 1], [0, 0, 0])], generators=[[1, 0, -1]])
    assert all(c["passed"] for c in op.validate())
    assert math.isinf(op.conjugate([1.2, 1.0, 0.8])[0])

    ext = sw.maximal_extension(op, sw.BoundPair.constant(space, 0, 1, 0.5, 2.0))
    value = ext.evaluate([1, 0, 0])[0]
    assert close(value, 1.25 / 3), value
    hit = ext.attain([1, 0, 0])
    assert all(close(a, b) for a, b in zip(hit["density"], [1.25, 0.5, 1.25])), hit
    assert close(hit["penalty"][0], 0.0, 1e-8)
    assert ext.positivity_guaranteed
    assert math.isinf(ext.penalty([0.2, 2.6, 0.2])[0])

    # two-period binomial tree from the shipped fixtures
    sc = sw.Scenario.load(os.path.join(ROOT, "fixtures", "fix_c_linear.json"))
    assert sc.grid == [0, 1, 2]
    price = sc.price(0, 2, [1, 0, 0, 0])
    assert close(price["value"][0], 0.25)
    assert close(sc.evaluate(1, 2, [1, 0, 0, 0])[0], 0.5)

    passed, report, text = sc.run("report")
    assert passed, text
    doc = json.loads(report)
    assert doc["schema_version"] == "1" and doc["passed"]

    restricted = sw.Scenario.load(os.path.join(ROOT, "fixtures", "fix_c_restricted.json"))
    passed, report, _ = restricted.run("check", suite="refine")
    assert passed
    assert json.loads(report)["sections"][0]["data"]["strict_decrease"] is not None

    try:
        sw.Scenario.from_json('{"schema_version": "2"}')
    except ValueError as e:
        assert "schema_version" in str(e) or "missing field" in str(e), e
    else:
        raise AssertionError("bad scenario accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
