import itertools
import re

from machine_learning.Vocabulary import normalize_words

SLOT = re.compile(r"\{(\w+)\}")

TRIGGER_MARKER = "assistant"
CONTINUATION = "and"

FILLERS = {
    "time": ["8 am", "7 am", "6 30", "noon", "9 pm", "10 15"],
    "number": ["two", "five", "ten", "twenty", "thirty"],
    "city": ["paris", "london", "tokyo", "boston", "seattle"],
    "person": ["mom", "dad", "anna", "david", "sarah", "the office"],
    "device": ["lights", "fan", "heater", "tv"],
    "room": ["kitchen", "bedroom", "living room", "garage"],
    "onoff": ["on", "off"],
    "artist": ["the beatles", "adele", "queen", "miles davis"],
    "when": ["today", "tomorrow", "tonight", "this weekend", "on friday"],
    "task": ["buy milk", "call the bank", "water the plants", "take my pills"],
    "item": ["phone", "wallet", "jacket", "keys"],
    "activity": ["go out", "stay home", "order pizza", "visit grandma"],
    "relative": ["sister", "brother", "aunt", "neighbor"],
    "adjective": ["good", "long", "strange", "boring"],
    "food": ["bread", "coffee", "cake", "juice"],
    "clause": [
        "then we can go home", "it was really nice", "i will call you later",
        "she said it was fine", "we should leave soon", "that is all i know",
    ],
}

DIRECTED_TEMPLATES = [
    "Set an alarm for {time}",
    "Tell me a joke",
    "What's the temperature",
    "What's the temperature in {city}",
    "Set a timer for {number} minutes",
    "Play {artist} in the {room}",
    "Turn {onoff} the {device} in the {room}",
    "Remind me to {task} {when}",
    "Call {person}",
    "What's the weather {when}",
    "How long will it take to get to {city}",
    "Send a message to {person}",
]

NON_DIRECTED_TEMPLATES = [
    "Excellent thank you very much",
    "Can we talk",
    "I was trying to do it",
    "I think we should {activity} {when}",
    "Did you see {person} {when}",
    "My {relative} is coming over {when}",
    "That was a really {adjective} movie",
    "We need to buy {food} for the party",
    "Oh no I forgot my {item}",
    "Honestly I don't know what {person} wants",
]

# phrases either class may produce; these cap what text alone can decide
AMBIGUOUS_TEMPLATES = [
    "What time is it",
    "Is it going to rain {when}",
    "Turn it up",
    "What's the score",
    "How much longer is it",
    "Where is my {item}",
    "Stop that",
    "What did {person} say",
    "Okay next one",
    "How old is {person}",
]


class TemplateGrammar:
    """ Template sentences with slot fillers.

    Non-directed sentences may continue with "and <clause>" any number of
    times up to `max_continuations`; no directed or ambiguous sentence
    contains "and".
    """

    def __init__(
        self, directed = None, non_directed = None, ambiguous = None,
        fillers = None, continuation_probability = 0.35,
        max_continuations = 4,
    ):
        self.directed = list(directed or DIRECTED_TEMPLATES)
        self.non_directed = list(non_directed or NON_DIRECTED_TEMPLATES)
        self.ambiguous = list(ambiguous or AMBIGUOUS_TEMPLATES)
        self.fillers = dict(fillers or FILLERS)
        self.continuation_probability = continuation_probability
        self.max_continuations = max_continuations

    def fill(self, template: str, stream) -> str:
        def choose(match):
            options = self.fillers[match.group(1)]
            return options[int(stream.integers(len(options)))]

        return SLOT.sub(choose, template)

    def expand(self, template: str) -> list:
        """ Every sentence a template can produce. """
        slots = SLOT.findall(template)
        sentences = []
        for values in itertools.product(*[self.fillers[s] for s in slots]):
            values = iter(values)
            sentences.append(SLOT.sub(lambda _: next(values), template))
        return sentences

    def sample_directed(self, stream) -> str:
        template = self.directed[int(stream.integers(len(self.directed)))]
        return self.fill(template, stream)

    def sample_ambiguous(self, stream) -> str:
        template = self.ambiguous[int(stream.integers(len(self.ambiguous)))]
        return self.fill(template, stream)

    def sample_non_directed(self, stream) -> str:
        template = self.non_directed[
            int(stream.integers(len(self.non_directed)))
        ]
        text = self.fill(template, stream)
        for _ in range(self.max_continuations):
            if stream.random() >= self.continuation_probability:
                break
            text += " {} {}".format(CONTINUATION, self.fill("{clause}", stream))
        return text

    def support(self, templates, max_tokens = None) -> set:
        """ Normalized word tuples of every expansion of `templates`. """
        result = set()
        for template in templates:
            for sentence in self.expand(template):
                words = normalize_words(sentence)
                if max_tokens is not None:
                    words = words[:max_tokens]
                result.add(tuple(words))
        return result

    def words(self) -> set:
        """ Every word the grammar can produce, the trigger marker included. """
        words = {TRIGGER_MARKER, CONTINUATION}
        for templates in [self.directed, self.non_directed, self.ambiguous]:
            for template in templates:
                words.update(normalize_words(SLOT.sub(" ", template)))
        for options in self.fillers.values():
            for option in options:
                words.update(normalize_words(option))
        return words
