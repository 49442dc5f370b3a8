import threading

import pytest


def run_parties(fn_s1, fn_s2, timeout=60.0):
    """Run the two party closures in parallel threads, returning both results.

    Either side's exception is re-raised in the caller, s1's first.
    """
    results = {}
    errors = {}

    def wrap(name, fn):
        try:
            results[name] = fn()
        except BaseException as exc:  # noqa: BLE001 - reported to caller
            errors[name] = exc

    t1 = threading.Thread(target=wrap, args=("s1", fn_s1), daemon=True)
    t2 = threading.Thread(target=wrap, args=("s2", fn_s2), daemon=True)
    t1.start()
    t2.start()
    t1.join(timeout)
    t2.join(timeout)
    if t1.is_alive() or t2.is_alive():
        raise TimeoutError("party thread did not finish")
    for name in ("s1", "s2"):
        if name in errors:
            raise errors[name]
    return results["s1"], results["s2"]


@pytest.fixture
def two_party():
    return run_parties
