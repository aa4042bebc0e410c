import pytest
from hypothesis import given, settings, strategies as st

from helpers import XNLI_EN, XNLI_VERBALIZER, write_task, write_template
from xshot.errors import TemplateError
from xshot.tasks import Example, load_task
from xshot.templates import (
    MASK,
    TemplateMode,
    Verbalizer,
    bind,
    instantiate,
    instantiate_gold,
    load_templates,
    parse_template,
    render_generation_query,
    select_template,
)


def tmpl(pattern, lang="en", verbalizer="identity", task="t"):
    return parse_template({"task": task, "language": lang, "patterns": pattern, "verbalizer": verbalizer})


def ex(fields, **kw):
    return Example(id=kw.pop("id", "e1"), lang=kw.pop("lang", "en"), fields=fields, **kw)


XNLI_EX = ex({"sentence1": "A man sleeps", "sentence2": "he rests."}, label="entailment")


def test_xnli_instantiation():
    t = tmpl(XNLI_EN, verbalizer=XNLI_VERBALIZER)
    p = instantiate(t, XNLI_EX, "entailment")
    assert p.text == "A man sleeps, right? Yes, he rests."
    assert p.mask_span == (21, 24)
    assert p.completion == "Yes"
    assert p.context == "A man sleeps, right? "
    assert p.unfilled() == "A man sleeps, right? [Mask], he rests."


def test_patterns_inserted_verbatim_without_spacing():
    t = tmpl("{a}[Mask]{b}")
    assert instantiate(t, ex({"a": "你好", "b": "吗"}), "是").text == "你好是吗"


def test_selector_patterns():
    t = tmpl({"cause": "{premise} because [Mask]", "effect": "{premise} so [Mask]"})
    e = ex({"premise": "It rained"}, choices=("x", "y"), answer_index=0, selector="effect")
    assert instantiate(t, e, "y").text == "It rained so y"
    with pytest.raises(TemplateError, match="unknown selector"):
        instantiate(t, ex({"premise": "p"}, choices=("x", "y"), answer_index=0, selector="other"), "x")


def test_default_selector_fallback():
    t = tmpl("{s} [Mask]")
    assert instantiate(t, ex({"s": "a"}, choices=("x", "y"), answer_index=0, selector="cause"), "x").text == "a x"


def test_blank_modifiers():
    t = tmpl("{sentence:before}[Mask]{sentence:after}")
    e = ex({"sentence": "The trophy didn't fit because _ was too big."}, choices=("the trophy", "the case"),
           answer_index=0)
    assert instantiate(t, e, "the case").text == "The trophy didn't fit because the case was too big."
    with pytest.raises(TemplateError, match="no '_' blank"):
        instantiate(t, ex({"sentence": "no blank"}, choices=("a", "b"), answer_index=0), "a")


def test_escapes():
    t = tmpl("{{x}} [[Mask]] {s} [Mask]")
    p = instantiate(t, ex({"s": "v"}), "c")
    assert p.text == "{x} [Mask] v c"
    assert p.completion == "c"


@pytest.mark.parametrize("pattern, msg", [
    ("no mask here {s}", "exactly one"),
    ("[Mask] and [Mask]", "exactly one"),
    ("{s [Mask]", "unbalanced"),
    ("s} [Mask]", "unbalanced"),
    ("{} [Mask]", "bad placeholder"),
    ("{s:upper} [Mask]", "bad placeholder"),
    ("", "empty pattern"),
])
def test_parse_errors(pattern, msg):
    with pytest.raises(TemplateError, match=msg):
        tmpl(pattern)


def test_verbalizer_must_be_injective():
    with pytest.raises(TemplateError, match="injective"):
        Verbalizer.from_descriptor({"a": "Yes", "b": "Yes"})


def test_verbalizer_domain():
    v = Verbalizer.from_descriptor({"a": "A"})
    with pytest.raises(TemplateError, match="not in verbalizer domain"):
        v("b")
    assert Verbalizer.from_descriptor("identity")("b") == "b"


def test_missing_field():
    with pytest.raises(TemplateError, match="missing field 'sentence2'"):
        instantiate(tmpl(XNLI_EN), ex({"sentence1": "x"}), "Yes")


def test_bind_checks_labels_and_fields(tmp_path):
    recs = [{"id": "1", "lang": "en", "fields": {"sentence1": "a", "sentence2": "b"}, "label": "entailment"}]
    task = load_task(write_task(tmp_path, "xnli", "classification", {"test": recs}, ["en"],
                                label_space=["entailment", "neutral", "contradiction"]))
    bind(tmpl(XNLI_EN, verbalizer=XNLI_VERBALIZER), task)
    with pytest.raises(TemplateError, match="does not cover"):
        bind(tmpl(XNLI_EN, verbalizer={"entailment": "Yes"}), task)
    with pytest.raises(TemplateError, match="field 'hyp'"):
        bind(tmpl("{sentence1} [Mask] {hyp}"), task)


def test_generation_query():
    t = tmpl("Q: {q} A: [Mask]")
    assert render_generation_query(t, ex({"q": "2+2?"}, reference="4")) == "Q: 2+2? A: "
    with pytest.raises(TemplateError, match="terminal mask"):
        render_generation_query(tmpl("[Mask] is the answer to {q}"), ex({"q": "x"}, reference="4"))


def test_load_templates_dir(tmp_path):
    write_template(tmp_path, "xnli", "en", XNLI_EN, XNLI_VERBALIZER)
    write_template(tmp_path, "xnli", "zh", "{sentence1}，对吗？[Mask]，{sentence2}", {"entailment": "是的"})
    ts = load_templates(tmp_path)
    assert sorted(ts) == ["en", "zh"]
    with pytest.raises(TemplateError, match="missing template file"):
        load_templates(tmp_path / "nope.json")
    (tmp_path / "empty").mkdir()
    with pytest.raises(TemplateError, match="no templates"):
        load_templates(tmp_path / "empty")


def test_select_template_modes():
    ts = {"en": tmpl(XNLI_EN), "zh": tmpl("{sentence1}[Mask]{sentence2}", lang="zh")}
    assert select_template(TemplateMode(), ts, "zh") is ts["zh"]
    with pytest.raises(TemplateError, match="no template for language 'vi'"):
        select_template(TemplateMode(), ts, "vi")
    src = TemplateMode.source("en")
    assert all(select_template(src, ts, lang) is ts["en"] for lang in ["zh", "vi", "en", "sw"])
    with pytest.raises(TemplateError):
        TemplateMode("source-language")


def test_cross_lingual_code_switch():
    t = tmpl(XNLI_EN, verbalizer=XNLI_VERBALIZER)
    zh = ex({"sentence1": "男人在睡觉", "sentence2": "他在休息。"}, lang="zh", label="entailment")
    p = instantiate(select_template(TemplateMode.source("en"), {"en": t}, "zh"), zh, "entailment")
    assert p.text == "男人在睡觉, right? Yes, 他在休息。"
    assert instantiate_gold(t, zh).text == p.text


field_text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20)


@settings(max_examples=300, deadline=None)
@given(s1=field_text, s2=field_text)
def test_injective_verbalizer_distinct_texts(s1, s2):
    t = tmpl(XNLI_EN, verbalizer=XNLI_VERBALIZER)
    e = ex({"sentence1": s1, "sentence2": s2})
    texts = {instantiate(t, e, c).text for c in XNLI_VERBALIZER}
    assert len(texts) == 3


@settings(max_examples=300, deadline=None)
@given(s1=field_text, s2=field_text, cand=st.sampled_from(sorted(XNLI_VERBALIZER)))
def test_mask_roundtrip(s1, s2, cand):
    t = tmpl(XNLI_EN, verbalizer=XNLI_VERBALIZER)
    p = instantiate(t, ex({"sentence1": s1, "sentence2": s2}), cand)
    assert p.unfilled() == f"{s1}, right? {MASK}, {s2}"
    assert p.text[p.mask_span[0]:p.mask_span[1]] == XNLI_VERBALIZER[cand]
