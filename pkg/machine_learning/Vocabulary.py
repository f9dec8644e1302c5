import string

PAD = "<pad>"
UNK = "<unk>"
RESERVED = [PAD, UNK]
REQUIRED_WORDS = ["yes", "no", "directed", "decision"]

DEFAULT_SIZE = 512
# hypotheses are truncated to this many tokens
DEFAULT_MAX_TOKENS = 16


class VocabularyError(ValueError):
    pass


def normalize_words(text: str) -> list:
    """ Lowercase, split on whitespace and strip leading and trailing
    punctuation from each word; words left empty are dropped.
    """
    words = []
    for word in text.lower().split():
        word = word.strip(string.punctuation)
        if word:
            words.append(word)
    return words


class Vocabulary:
    """ Word-level vocabulary: `<pad>`, `<unk>`, the decision words, the
    corpus words in sorted order, then `<unused_k>` fillers up to `size`.
    """

    def __init__(self, tokens: list):
        if tokens[:len(RESERVED)] != RESERVED:
            raise VocabularyError(
                "vocabulary must start with {}".format(RESERVED)
            )
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("vocabulary tokens must be unique")
        for word in REQUIRED_WORDS:
            if word not in tokens:
                raise VocabularyError("vocabulary lacks {}".format(word))
        self.tokens = list(tokens)
        self.ids = {token: i for i, token in enumerate(self.tokens)}

    @classmethod
    def build(cls, words, size = DEFAULT_SIZE):
        words = sorted(
            set(words) - set(RESERVED) - set(REQUIRED_WORDS)
        )
        tokens = RESERVED + REQUIRED_WORDS + words
        if len(tokens) > size:
            raise VocabularyError(
                "{} distinct words do not fit a vocabulary of {}".format(
                    len(tokens), size,
                )
            )
        tokens += [
            "<unused_{}>".format(i) for i in range(size - len(tokens))
        ]
        return cls(tokens)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, word):
        return word in self.ids

    @property
    def pad_id(self) -> int:
        return self.ids[PAD]

    @property
    def unk_id(self) -> int:
        return self.ids[UNK]

    def token_id(self, word: str) -> int:
        return self.ids.get(word, self.ids[UNK])

    def tokenize(self, text: str, max_tokens = DEFAULT_MAX_TOKENS) -> list:
        ids = [self.token_id(word) for word in normalize_words(text)]
        if max_tokens is not None:
            ids = ids[:max_tokens]
        return ids

    def detokenize(self, ids) -> str:
        return " ".join(
            self.tokens[i] for i in ids if int(i) != self.pad_id
        )

    def to_record(self) -> list:
        return list(self.tokens)
