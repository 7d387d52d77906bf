import pytest

from realit.synth import generate_functions

VARMISUSE_BUGGY = """def remove_applied(self, patches):
    applied = self.db.applied_patches()
    for patch in applied:
        if patch in patches:
            patches.remove(applied)
"""
VARMISUSE_FIXED = VARMISUSE_BUGGY.replace("remove(applied)", "remove(patch)")

BINOP_BUGGY = """def updateRefractionParameters(self):
    if self.ui.checkRefracNone.isChecked():
        return False
    if self.checkRefracNoTrack.isChecked():
        if self.app.mount.status != 0:
            return False
    return True
"""
BINOP_FIXED = BINOP_BUGGY.replace("status != 0", "status == 0")

NEGATION_BUGGY = """def set_filter(self, namespace):
    if namespace:
        self.namespacesFilter = ["prymatex", "user"]
    else:
        self.namespacesFilter = namespace.split()
"""
NEGATION_FIXED = NEGATION_BUGGY.replace("if namespace:", "if not namespace:")

# hand-written functions exercising the lexer beyond the generated corpus
HAND_FUNCS = [
    "def f(x):\n    return x\n",
    "def g(a, b=2, *args, **kw):\n    c = a ** 2 + b // 3 - -1\n    return c if c > 0 else -2\n",
    "def h(items):\n    # a comment\n    out = [i * 2 for i in items if i % 2 == 0]\n    return out\n",
    "def s(name):\n    msg = 'hi ' + name + \"!\"\n    doc = '''multi\nline'''\n    return msg, doc\n",
    "def w(xs):\n    total = 0\n    while total < 10 and xs:\n        total += xs.pop()\n    else:\n        total -= 1\n    return total\n",
    "def t(a, b):\n    assert a is not None, 'need a'\n    if a not in b or not b:\n        return False\n    return True\n",
    "def lam(xs):\n    key = lambda x, y=1: x + y\n    return sorted(xs, key=key)\n",
    "def cont(a,\n         b):\n    z = (a +\n         b)\n    return z \\\n        * 2\n",
    "def nums():\n    return [0x1F, 0b101, 1_000, 3.14, 1e-3, 2j, 0o7]\n",
    "def walrus(data):\n    if (n := len(data)) > 3:\n        return n\n    return 0\n",
    "def nested(m):\n    def inner(k):\n        return k + 1\n    return {k: inner(v) for k, v in m.items()}\n",
    "def imp(path):\n    import os\n    from os import path as p\n    with open(path) as fh:\n        data = fh.read()\n    return os.sep, p, data\n",
    "def bits(a, b):\n    c = a & b | a ^ b\n    c <<= 1\n    c >>= 2\n    return ~c, a @ b\n",
    "def glob():\n    global COUNTER\n    COUNTER += 1\n    return COUNTER\n",
    "def tryer(x):\n    try:\n        y = 1 / x\n    except ZeroDivisionError as err:\n        y = None\n    finally:\n        pass\n    return y\n",
    "def fstr(v):\n    return f'{v!r} and {v:>4}'\n",
    "def unpack(pairs):\n    for i, (a, b) in enumerate(pairs):\n        a, b = b, a\n        yield i, a - b\n",
    "def semi(a):\n    b = a; c = b\n    return c\n",
    "def noeol(a):\n    return a",
    "def deco(fn):\n    @staticmethod\n    def wrapped(*a):\n        return fn(*a)\n    return wrapped\n",
    "def uni(\u00e9t\u00e9):\n    r\u00e9sum\u00e9 = \u00e9t\u00e9 + 1\n    return r\u00e9sum\u00e9\n",
]


@pytest.fixture(scope="session")
def corpus200():
    return generate_functions(200, seed=11)


@pytest.fixture(scope="session")
def fixture_corpus(corpus200):
    return HAND_FUNCS + [VARMISUSE_BUGGY, VARMISUSE_FIXED, BINOP_BUGGY, NEGATION_BUGGY] + corpus200


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
