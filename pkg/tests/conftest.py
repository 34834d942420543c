from __future__ import annotations

import subprocess
from pathlib import Path

import pytest

from rustport.gateway import prompt_digest, wrap_in_fence

# a tiny judge-style C program: read two ints, print their sum
ADD_C_SOURCE = """\
#include <stdio.h>

int main(void) {
    int a, b;
    if (scanf("%d %d", &a, &b) != 2) {
        return 1;
    }
    printf("%d\\n", a + b);
    return 0;
}
"""

ADD_CASES = [("2 3\n", "5\n"), ("10 -4\n", "6\n")]

RUST_ADD_OK = """\
use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let mut it = input.split_whitespace();
    let a: i64 = it.next().unwrap().parse().unwrap();
    let b: i64 = it.next().unwrap().parse().unwrap();
    println!("{}", a + b);
}
"""

# fails to compile: assigns to an immutable binding (E0384)
RUST_ADD_E0384 = """\
use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let mut it = input.split_whitespace();
    let a: i64 = it.next().unwrap().parse().unwrap();
    let b: i64 = it.next().unwrap().parse().unwrap();
    let total = 0i64;
    total = a + b;
    println!("{}", total);
}
"""

# fails to compile: &str where i64 expected (E0308)
RUST_ADD_E0308 = """\
use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let mut it = input.split_whitespace();
    let a: i64 = it.next().unwrap();
    let b: i64 = it.next().unwrap().parse().unwrap();
    println!("{}", a + b);
}
"""

# fails to compile: unresolved module path (E0433, not a guided-repair target)
RUST_ADD_E0433 = """\
fn main() {
    let total = helpers::sum_from_stdin();
    println!("{}", total);
}
"""

# compiles, then panics on any input (index out of bounds)
RUST_ADD_PANIC = """\
use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let v: Vec<i64> = Vec::new();
    println!("{}", v[0]);
}
"""

# compiles, never terminates
RUST_ADD_LOOP = """\
fn main() {
    loop {}
}
"""

# compiles and runs, but prints the difference instead of the sum
RUST_ADD_WRONG = """\
use std::io::Read;

fn main() {
    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input).unwrap();
    let mut it = input.split_whitespace();
    let a: i64 = it.next().unwrap().parse().unwrap();
    let b: i64 = it.next().unwrap().parse().unwrap();
    println!("{}", a - b);
}
"""


def write_program_dir(root: Path, pid: str, source: str = ADD_C_SOURCE, cases=None) -> Path:
    cases = ADD_CASES if cases is None else cases
    prog_dir = root / pid
    tests_dir = prog_dir / "tests"
    tests_dir.mkdir(parents=True)
    (prog_dir / "main.c").write_text(source, encoding="utf-8")
    for i, (case_in, case_out) in enumerate(cases):
        (tests_dir / f"{i}.in").write_text(case_in, encoding="utf-8")
        (tests_dir / f"{i}.out").write_text(case_out, encoding="utf-8")
    return prog_dir


class ScriptedWriter:
    """Builds a scripted-backend response directory for tests."""

    def __init__(self, root: Path):
        self.root = root

    def playlist(self, pid: str, responses: list[str]) -> None:
        pdir = self.root / "playlist" / pid
        pdir.mkdir(parents=True, exist_ok=True)
        for i, text in enumerate(responses):
            (pdir / f"{i:03d}.txt").write_text(text, encoding="utf-8")

    def digest(self, prompt: str, response: str) -> None:
        ddir = self.root / "by-digest"
        ddir.mkdir(parents=True, exist_ok=True)
        (ddir / f"{prompt_digest(prompt)}.txt").write_text(response, encoding="utf-8")

    @staticmethod
    def fenced(code: str) -> str:
        return wrap_in_fence(code)


@pytest.fixture
def scripted(tmp_path) -> ScriptedWriter:
    return ScriptedWriter(tmp_path / "responses")


def compile_rust(source: str, out_dir: Path, name: str) -> Path:
    src = out_dir / f"{name}.rs"
    src.write_text(source, encoding="utf-8")
    binary = out_dir / name
    proc = subprocess.run(
        ["rustc", "--edition", "2021", "-O", str(src), "-o", str(binary)],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise RuntimeError(f"fixture compile failed for {name}:\n{proc.stderr}")
    return binary


@pytest.fixture(scope="session")
def fixture_binaries(tmp_path_factory) -> dict[str, Path]:
    """Pre-compiled Rust binaries shared across validation tests."""
    out_dir = tmp_path_factory.mktemp("bins")
    spam = """\
fn main() {
    for _ in 0..200000 {
        println!("xxxxxxxxxxxxxxxxxxxx");
    }
}
"""
    return {
        "add": compile_rust(RUST_ADD_OK, out_dir, "add"),
        "panic": compile_rust(RUST_ADD_PANIC, out_dir, "panic_bin"),
        "loop": compile_rust(RUST_ADD_LOOP, out_dir, "loop_bin"),
        "wrong": compile_rust(RUST_ADD_WRONG, out_dir, "wrong_bin"),
        "spam": compile_rust(spam, out_dir, "spam_bin"),
    }
