import os
import subprocess
import sys

import pytest

from choiceopt import kernels


def default_backend(env_value):
    env = dict(os.environ)
    env.pop("CHOICEOPT_PURE_PYTHON", None)
    if env_value is not None:
        env["CHOICEOPT_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c",
                          "from choiceopt import kernels; print(kernels.DEFAULT)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_environment_forces_pure_python():
    assert default_backend("1") == "python"


@pytest.mark.skipif("compiled" not in kernels.available_backends(),
                    reason="compiled kernel not built")
def test_compiled_is_default_when_built():
    assert default_backend(None) == "compiled"


def test_python_backend_always_available():
    assert "python" in kernels.available_backends()
    assert kernels.get_backend("python").NAME == "python"
    with pytest.raises(ValueError, match="not available"):
        kernels.get_backend("fortran")
