"""Regenerates the tiny pre-trained-format fixtures under tests/data/hf.

Each adapter directory holds config.json, model.safetensors, tokenizer.json
and expected.json (token ids and pooled outputs computed by transformers).
Requires torch, transformers, tokenizers and safetensors.
"""
import json
import pathlib

import torch
from safetensors.torch import save_file
from tokenizers import Regex, Tokenizer, decoders, models, normalizers, pre_tokenizers, processors, trainers
import transformers

HERE = pathlib.Path(__file__).resolve().parent
OUT = HERE / "hf"
SAMPLE = HERE.parent.parent / "data" / "sample" / "gold.jsonl"

TEXTS = [
    "@AcmeAir my flight was delayed AGAIN!!! worst service ever https://t.co/xyz",
    "Thanks for the quick reply, really appreciate it :)",
    "I've been waiting 3 hours... don't they care? #fail",
    "Café naïve résumé — déjà vu",
    "multiple   spaces\tand\nnewlines",
    "emoji 😡😡 and cjk 你好 text",
    "``quoted'' text with 'single' quotes and it's fine",
    " ".join(["very"] * 60) + " long tweet",
    "",
]


def corpus():
    lines = [json.loads(l)["text"] for l in SAMPLE.read_text().splitlines()]
    return lines + TEXTS * 3


def wordpiece():
    tok = Tokenizer(models.WordPiece(unk_token="[UNK]"))
    tok.normalizer = normalizers.BertNormalizer(lowercase=True)
    tok.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    tok.train_from_iterator(corpus(), trainers.WordPieceTrainer(
        vocab_size=320, special_tokens=["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]))
    cls, sep = tok.token_to_id("[CLS]"), tok.token_to_id("[SEP]")
    tok.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]", special_tokens=[("[CLS]", cls), ("[SEP]", sep)])
    return tok


def byte_bpe():
    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    tok.train_from_iterator(corpus(), trainers.BpeTrainer(
        vocab_size=420, special_tokens=["<s>", "<pad>", "</s>", "<unk>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet()))
    s, e = tok.token_to_id("<s>"), tok.token_to_id("</s>")
    tok.post_processor = processors.TemplateProcessing(
        single="<s> $A </s>", special_tokens=[("<s>", s), ("</s>", e)])
    return tok


def unigram(lowercase, specials, template):
    tok = Tokenizer(models.Unigram())
    steps = [normalizers.Replace("``", '"'), normalizers.Replace("''", '"'),
             normalizers.NFKD(), normalizers.StripAccents()]
    if lowercase:
        steps.append(normalizers.Lowercase())
    steps.append(normalizers.Replace(Regex(" {2,}"), " "))
    tok.normalizer = normalizers.Sequence(steps)
    tok.pre_tokenizer = pre_tokenizers.Metaspace(replacement="▁", prepend_scheme="always")
    tok.train_from_iterator(corpus(), trainers.UnigramTrainer(
        vocab_size=300, special_tokens=specials, unk_token="<unk>"))
    ids = {t: tok.token_to_id(t) for t in specials}
    tok.post_processor = processors.TemplateProcessing(
        single=template, special_tokens=[(t, i) for t, i in ids.items() if t in template])
    return tok


def encode(tok, text, max_len=None):
    enc = tok.encode(text)
    return enc.ids, enc.type_ids


def write(name, tok, model, state, pooled_fn):
    d = OUT / name
    d.mkdir(parents=True, exist_ok=True)
    tok.save(str(d / "tokenizer.json"))
    model.config.to_json_file(str(d / "config.json"))
    save_file({k: v.contiguous().float() for k, v in state.items()}, str(d / "model.safetensors"))
    cases = []
    with torch.no_grad():
        for text in TEXTS:
            ids, types = encode(tok, text)
            if len(ids) > 49:
                continue
            pooled = pooled_fn(torch.tensor([ids]), torch.tensor([types]))
            cases.append({"text": text, "ids": ids, "type_ids": types,
                          "pooled": pooled[0].double().tolist()})
    lengths = [{"text": t, "length": len(encode(tok, t)[0])} for t in TEXTS]
    (d / "expected.json").write_text(json.dumps({"cases": cases, "lengths": lengths}, indent=1))


def main():
    torch.manual_seed(0)
    small = dict(hidden_size=16, num_hidden_layers=2, num_attention_heads=2, intermediate_size=24,
                 max_position_embeddings=64, hidden_dropout_prob=0.0, attention_probs_dropout_prob=0.0,
                 initializer_range=0.2)

    tok = wordpiece()
    cfg = transformers.BertConfig(vocab_size=tok.get_vocab_size(), type_vocab_size=2, **small)
    m = transformers.BertModel(cfg).eval()
    write("bert_base_uncased", tok, m, {"bert." + k: v for k, v in m.state_dict().items()},
          lambda ids, types: m(input_ids=ids, token_type_ids=types).pooler_output)

    tok = byte_bpe()
    cfg = transformers.RobertaConfig(vocab_size=tok.get_vocab_size(), type_vocab_size=1, pad_token_id=1,
                                     **{**small, "max_position_embeddings": 66})
    m = transformers.RobertaModel(cfg).eval()
    write("roberta_base", tok, m, dict(m.state_dict()),
          lambda ids, types: m(input_ids=ids, token_type_ids=types).pooler_output)

    tok = unigram(True, ["<pad>", "<unk>", "[CLS]", "[SEP]"], "[CLS] $A [SEP]")
    cfg = transformers.AlbertConfig(vocab_size=tok.get_vocab_size(), embedding_size=8, hidden_act="gelu_new",
                                    type_vocab_size=2, classifier_dropout_prob=0.0, **small)
    m = transformers.AlbertModel(cfg).eval()
    write("albert_base", tok, m, {"albert." + k: v for k, v in m.state_dict().items()},
          lambda ids, types: m(input_ids=ids, token_type_ids=types).pooler_output)

    tok = unigram(False, ["<unk>", "<s>", "</s>", "<cls>", "<sep>", "<pad>", "<mask>"],
                  "$A:0 <sep>:0 <cls>:2")
    cfg = transformers.XLNetConfig(vocab_size=tok.get_vocab_size(), d_model=16, n_layer=2, n_head=2,
                                   d_inner=24, dropout=0.0, summary_last_dropout=0.0, initializer_range=0.2)
    m = transformers.XLNetForSequenceClassification(cfg).eval()

    def xlnet_pooled(ids, types):
        h = m.transformer(input_ids=ids, token_type_ids=types).last_hidden_state
        return m.sequence_summary(h)

    write("xlnet_base_cased", tok, m, {k: v for k, v in m.state_dict().items() if not k.startswith("logits_proj")},
          xlnet_pooled)


if __name__ == "__main__":
    main()
