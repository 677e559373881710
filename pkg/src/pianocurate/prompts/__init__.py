"""System prompts shipped with the pipeline (crawl scoring and metadata extraction)."""

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8").strip("\n")


def crawl_score_prompt() -> str:
    return load("crawl_score")


def metadata_prompt() -> str:
    return load("metadata_extract")
