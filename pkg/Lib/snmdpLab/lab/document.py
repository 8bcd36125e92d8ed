# -*- coding: utf-8 -*-

import hashlib
import json
import logging
import math
import os
import xml.etree.ElementTree as ET

import numpy as np

from snmdpLab.objects.error import ConfigurationError, LabError
from snmdpLab.objects.mdp import Policy, TabularMDP
from snmdpLab.objects.noise import TabularNoise


"""

    Read and write snmdpLab experiment documents.

    An ExperimentDocumentWriter object writes a properly formed description
    of an experiment: a master seed and one element per subcommand.

    An ExperimentDocumentReader object validates such a document, fills in
    the defaults and runs the subcommands it describes.

"""

LOG_LEVEL_VARIABLE = "SNMDP_LOG"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def logLevel(environ=None):
    """
    Level named by SNMDP_LOG, INFO when unset.
    ::

        >>> logLevel({"SNMDP_LOG": "debug"}) == logging.DEBUG
        True
        >>> logLevel({}) == logging.INFO
        True
        >>> logLevel({"SNMDP_LOG": "loud"})
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'unknown log level''LOUD'
    """
    if environ is None:
        environ = os.environ
    name = environ.get(LOG_LEVEL_VARIABLE, "INFO").strip().upper()
    if name not in LOG_LEVELS:
        raise ConfigurationError("unknown log level", name)
    return getattr(logging, name)


def newLogger(proposedLogPath, level=None):
    """ Create a new logging object at this path """
    logging.basicConfig(filename=proposedLogPath,
            level=logLevel() if level is None else level,
            filemode="w",
            format='%(asctime)s snmdpLab %(message)s',
            )
    return logging.getLogger("snmdpLab")

def _indent(elem, whitespace="    ", level=0):
    # taken from http://effbot.org/zone/element-lib.htm#prettyprint
    i = "\n" + level * whitespace
    if len(elem):
        if not elem.text or not elem.text.strip():
            elem.text = i + whitespace
        if not elem.tail or not elem.tail.strip():
            elem.tail = i
        for elem in elem:
            _indent(elem, whitespace, level+1)
        if not elem.tail or not elem.tail.strip():
            elem.tail = i
    else:
        if level and (not elem.tail or not elem.tail.strip()):
            elem.tail = i


# attribute parsers: text in, value out, ValueError on bad input

def _integer(minimum):
    def parse(text):
        value = int(text)
        if value < minimum:
            raise ValueError("must be at least %d" % minimum)
        return value
    return parse

def _real(low=None, high=None, openLow=False, openHigh=False):
    def parse(text):
        value = float(text)
        if math.isnan(value):
            raise ValueError("not a number")
        if low is not None and (value < low or (openLow and value == low)):
            raise ValueError("below range")
        if high is not None and (value > high or (openHigh and value == high)):
            raise ValueError("above range")
        return value
    return parse

def _optionalReal(low):
    positive = _real(low, openLow=True)
    def parse(text):
        if text.strip().lower() == "none":
            return None
        return positive(text)
    return parse

def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError("expected one of %s" % ", ".join(options))
        return text
    return parse

def _listOf(item):
    def parse(text):
        values = [item(part.strip()) for part in text.split(",") if part.strip()]
        if not values:
            raise ValueError("empty list")
        return values
    return parse

def _order(text):
    value = float(text)
    if not value >= 1:
        raise ValueError("Wasserstein order must be at least 1")
    return value

def _bound(text):
    # "none" is kept as text: an explicitly unbounded head, unlike a missing attribute
    if text.strip().lower() == "none":
        return "none"
    return _real(0.0, openLow=True)(text)

def _flag(text):
    if text in ("1", "true", "yes"):
        return True
    if text in ("0", "false", "no"):
        return False
    raise ValueError("expected 0 or 1")


_count = _integer(0)
_positive = _integer(1)
_discount = _real(0.0, 1.0, openLow=True, openHigh=True)
_nonNegative = _real(0.0)
_strictlyPositive = _real(0.0, openLow=True)
_cases = ("none", "current", "next", "both")
_envs = ("cartpole", "mountaincar")

INFINITY = float("inf")

# element name -> attribute name -> (parser, default)
SECTION_ATTRIBUTES = {
    "tabular-contract": dict(
        trials=(_count, 100),
        maxStates=(_positive, 6),
        maxActions=(_positive, 3),
        gamma=(_discount, 0.9),
        pairs=(_positive, 3),
        orders=(_listOf(_order), [1.0, INFINITY]),
        maxAllowed=(_positive, 3),
        distributional=(_flag, True),
        fixedPoints=(_flag, True),
        adversarialTrials=(_count, None),
        adversarialStates=(_positive, 4),
        adversarialAllowed=(_positive, 2),
        propertyInstances=(_count, None),
        cap=(_integer(2), 512),
        # grid size of the distributional fixed point; its iterates are always projected onto this grid
        fixedPointCap=(_integer(2), 64),
    ),
    "td-analysis": dict(
        systems=(_count, 200),
        maxStates=(_integer(2), 8),
        maxFeatures=(_positive, 4),
        gamma=(_discount, 0.8),
        rhos=(_listOf(_nonNegative), [0.01, 0.05, 0.1]),
        cases=(_listOf(_choice(_cases)), list(_cases)),
        seeds=(_positive, 10),
        steps=(_positive, 20000),
        divergenceScales=(_listOf(_strictlyPositive), [1.0, 10.0, 100.0]),
    ),
    "grad-bounds": dict(
        ks=(_listOf(_integer(2)), [2, 20, 51]),
        ls=(_listOf(_strictlyPositive), [0.5, 1.0, 5.0]),
        modes=(_listOf(_choice(("linear", "nonlinear"))), ["linear", "nonlinear"]),
        trials=(_positive, 10000),
        inputScales=(_listOf(_strictlyPositive), [1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6]),
        dim=(_positive, 4),
        width=(_positive, 16),
        checks=(_count, 5),
        tolerance=(_strictlyPositive, 1e-6),
    ),
    "influence": dict(
        instances=(_count, 50),
        dim=(_positive, 3),
        gamma=(_discount, 0.9),
        epsilons=(_listOf(_real(0.0, 1.0, openLow=True, openHigh=True)), [1e-3, 1e-4, 1e-5]),
        eta=(_strictlyPositive, 0.01),
    ),
    "train": dict(
        env=(_choice(_envs), "cartpole"),
        seeds=(_positive, 5),
        steps=(_optionalReal(0.0), None),
        matrix=(_choice(("none", "preset")), "preset"),
        site=(_choice(_cases), "both"),
        smoothing=(_positive, 10),
        finalFraction=(_real(0.0, 1.0, openLow=True), 0.1),
        minimumReturn=(_real(), None),
    ),
}

AGENT_ATTRIBUTES = dict(
    loss=(_choice(("least_squares", "histogram")), None),
    head=(_choice(("linear", "nonlinear")), None),
    k=(_integer(2), None),
    l=(_bound, None),
    lr=(_strictlyPositive, None),
    width=(_positive, None),
    batch=(_positive, None),
    sync=(_positive, None),
    replay=(_positive, None),
    starts=(_count, None),
    gamma=(_discount, None),
    temperature=(_strictlyPositive, None),
)


def _allowedSets(text):
    # "0 1|1": one group of state indices per state
    return [[int(v) for v in group.split()] for group in text.split("|")]


_reals = _listOf(_real())

# an explicit MDP inside tabular-contract; arrays are flattened in C order
MDP_ATTRIBUTES = dict(
    states=(_positive, None),
    actions=(_positive, None),
    gamma=(_discount, None),
    transition=(_reals, None),
    reward=(_reals, None),
    policy=(_reals, None),
    kernel=(_reals, None),
    allowed=(_allowedSets, None),
)

INJECTION_ATTRIBUTES = dict(
    site=(_choice(_cases), None),
    kind=(_choice(("none", "gaussian", "pgd")), "none"),
    strength=(_nonNegative, 0.0),
    iterations=(_positive, 3),
    stepSize=(_optionalReal(0.0), None),
)

# noise levels of the standard injection matrix per task: (gaussian std, pgd epsilon)
PRESET_STRENGTHS = {
    "cartpole": ((0.05, 0.1), (0.05, 0.1)),
    "mountaincar": ((0.01, 0.0125), (0.01, 0.1)),
}

SUBCOMMANDS = ("tabular-contract", "td-analysis", "grad-bounds", "influence", "train")


def presetInjections(envName, site):
    """
    The noise-free injection plus the task's Gaussian and PGD levels at site.
    ::

        >>> [(i["kind"], i["strength"]) for i in presetInjections("mountaincar", "both")]
        [('none', 0.0), ('gaussian', 0.01), ('gaussian', 0.0125), ('pgd', 0.01), ('pgd', 0.1)]
    """
    stds, epsilons = PRESET_STRENGTHS[envName]
    injections = [dict(site="none", kind="none", strength=0.0, iterations=3, stepSize=None)]
    for std in stds:
        injections.append(dict(site=site, kind="gaussian", strength=std, iterations=3, stepSize=None))
    for epsilon in epsilons:
        injections.append(dict(site=site, kind="pgd", strength=epsilon, iterations=3, stepSize=None))
    return injections


def _formatAttribute(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ",".join(_formatAttribute(v) for v in value)
    if isinstance(value, np.ndarray):
        return _formatAttribute([float(v) for v in value.ravel()])
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ExperimentConfig(dict):
    """
    Validated experiment: subcommand name -> attribute dict, every default
    filled in. configHash covers the sections and the master seed.
    ::

        >>> c = ExperimentConfig(7, {"influence": {"instances": 2}})
        >>> c
        <ExperimentConfig seed:7 sections:influence >
        >>> len(c.configHash())
        64
        >>> c.configHash() == ExperimentConfig(8, {"influence": {"instances": 2}}).configHash()
        False
    """

    def __init__(self, seed, sections):
        super(ExperimentConfig, self).__init__(sections)
        self.seed = seed

    def __repr__(self):
        return "<%s seed:%d sections:%s >" % (self.__class__.__name__, self.seed, ",".join(sorted(self)))

    def canonical(self):
        return json.dumps(dict(seed=self.seed, sections=dict(self)), sort_keys=True, separators=(",", ":"))

    def configHash(self):
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def withSeed(self, seed):
        return ExperimentConfig(_checkSeed(seed), dict(self))


def _checkSeed(seed):
    if isinstance(seed, bool) or not isinstance(seed, int) or seed <= 0:
        raise ConfigurationError("master seed must be a positive integer", seed)
    return seed


class ExperimentDocumentWriter(object):
    """
    Writer for an experiment description file.

    *   path:   path for the document
    *   seed:   master seed
    *   toolVersion: version of this tool
    ::

        >>> import os, tempfile
        >>> path = os.path.join(tempfile.mkdtemp(), "small.snmdp")
        >>> w = ExperimentDocumentWriter(path, seed=3)
        >>> w.addInfluence(instances=2)
        >>> w.startTrain(env="cartpole", seeds=1, steps=300, matrix="none")
        >>> w.addAgent(loss="histogram", k=4)
        >>> w.addInjection(site="both", kind="gaussian", strength=0.05)
        >>> w.save()
        >>> config = ExperimentDocumentReader(path).read()
        >>> config.seed, config["influence"]["instances"], config["train"]["agents"][0]["k"]
        (3, 2, 4)
        >>> config["train"]["injections"][0]["kind"]
        'gaussian'
    """

    _whiteSpace = "    "

    def __init__(self, path, seed, toolVersion=1, verbose=False):
        self.path = path
        self.toolVersion = toolVersion
        self.verbose = verbose
        self.root = ET.Element("experiment")
        self.root.attrib['format'] = "%d" % toolVersion
        self.root.attrib['seed'] = "%d" % _checkSeed(seed)
        self.currentTrain = None

    def save(self, pretty=True):
        """ Save the xml. Make pretty if necessary. """
        self.endTrain()
        if pretty:
            _indent(self.root, whitespace=self._whiteSpace)
        tree = ET.ElementTree(self.root)
        tree.write(self.path, encoding="utf-8", method='xml', xml_declaration=True)

    def _makeElement(self, tag, attributes, known):
        for name in attributes:
            if name not in known:
                raise ConfigurationError("unknown attribute for %s" % tag, name)
        element = ET.Element(tag)
        for name, value in attributes.items():
            element.attrib[name] = _formatAttribute(value)
        return element

    def addSection(self, name, **attributes):
        """ Add the element for subcommand name. Each subcommand appears once. """
        if name not in SECTION_ATTRIBUTES:
            raise ConfigurationError("unknown subcommand", name)
        if name == "train":
            raise ConfigurationError("use startTrain for the train section")
        if self.root.find(name) is not None:
            raise ConfigurationError("section is already present", name)
        self.root.append(self._makeElement(name, attributes, SECTION_ATTRIBUTES[name]))

    def addTabularContract(self, **attributes):
        self.addSection("tabular-contract", **attributes)

    def addTabularMdp(self, mdp, pi=None, noise=None):
        """ Add an explicit MDP, with optional policy and noise kernel, to the tabular-contract section. """
        section = self.root.find("tabular-contract")
        if section is None:
            raise ConfigurationError("add the tabular-contract section first")
        attributes = dict(states=mdp.nStates, actions=mdp.nActions, gamma=mdp.gamma,
                          transition=mdp.transition, reward=mdp.reward)
        if pi is not None:
            attributes["policy"] = pi.probs
        if noise is not None:
            attributes["kernel"] = noise.kernel
            attributes["allowed"] = "|".join(" ".join("%d" % v for v in noise.allowedSet(s))
                                             for s in range(noise.nStates))
        section.append(self._makeElement("mdp", attributes, MDP_ATTRIBUTES))

    def addTdAnalysis(self, **attributes):
        self.addSection("td-analysis", **attributes)

    def addGradBounds(self, **attributes):
        self.addSection("grad-bounds", **attributes)

    def addInfluence(self, **attributes):
        self.addSection("influence", **attributes)

    def startTrain(self, **attributes):
        """ Start the train section. Add agents and injections, then endTrain() or save(). """
        if self.currentTrain is not None or self.root.find("train") is not None:
            raise ConfigurationError("section is already present", "train")
        self.currentTrain = self._makeElement("train", attributes, SECTION_ATTRIBUTES["train"])

    def addAgent(self, **attributes):
        if self.currentTrain is None:
            raise ConfigurationError("start the train section first")
        self.currentTrain.append(self._makeElement("agent", attributes, AGENT_ATTRIBUTES))

    def addInjection(self, **attributes):
        if self.currentTrain is None:
            raise ConfigurationError("start the train section first")
        self.currentTrain.append(self._makeElement("injection", attributes, INJECTION_ATTRIBUTES))

    def endTrain(self):
        if self.currentTrain is None:
            return
        self.root.append(self.currentTrain)
        self.currentTrain = None


class ExperimentDocumentReader(object):
    """
    Read an experiment document, validate it and run it.

    *   documentPath:   path of the document
    *   seed:           overrides the document's master seed when given
    *   logPath:        log file, next to the document unless given
    *   progressFunc:   callback progressFunc(state, action, text, tick)
    """

    _formatVersion = 1

    def __init__(self, documentPath,
            seed=None,
            verbose=False,
            logPath=None,
            progressFunc=None,
            ):
        self.path = documentPath
        self.seedOverride = seed
        self.verbose = verbose
        self.progressFunc = progressFunc
        self.config = None
        self.results = {}
        if logPath is None:
            logPath = os.path.join(os.path.dirname(os.path.abspath(documentPath)), "snmdpLab.log")
        self.logPath = logPath
        self.logger = None
        if self.verbose:
            self.logger = newLogger(logPath)

    def __repr__(self):
        return "<%s %s >" % (self.__class__.__name__, os.path.basename(self.path))

    def reportProgress(self, state, action, text=None, tick=None):
        """ Keep other code updated about our progress.

            state:      'prep' reading the document
                        'generate' running a subcommand or a run
                        'done' wrapping up
                        'error' reporting a problem

            action:     'load', 'start', 'run' or 'stop'
            text:       document path, subcommand name or run label
            tick:       a float between 0 and 1 indicating progress.
        """
        if self.progressFunc is not None:
            self.progressFunc(state=state, action=action, text=text, tick=tick)

    def read(self):
        """ Parse and validate the document. Returns the ExperimentConfig. """
        if self.config is not None:
            return self.config
        self.reportProgress("prep", 'load', self.path)
        try:
            root = ET.parse(self.path).getroot()
        except (ET.ParseError, IOError, OSError) as error:
            raise ConfigurationError("can not read the experiment document", str(error))
        if root.tag != "experiment":
            raise ConfigurationError("root element must be experiment", root.tag)
        for name in root.attrib:
            if name not in ("format", "seed"):
                raise ConfigurationError("unknown attribute for experiment", name)
        self.readVersion(root)
        seed = self.readSeed(root)
        sections = {}
        for element in root:
            if element.tag not in SECTION_ATTRIBUTES:
                raise ConfigurationError("unknown element", element.tag)
            if element.tag in sections:
                raise ConfigurationError("section appears more than once", element.tag)
            if element.tag == "train":
                sections["train"] = self.readTrain(element)
            elif element.tag == "tabular-contract":
                sections[element.tag] = self.readTabularContract(element)
            else:
                if len(element):
                    raise ConfigurationError("unexpected children in %s" % element.tag, element[0].tag)
                sections[element.tag] = self._readAttributes(element, SECTION_ATTRIBUTES[element.tag])
        self.config = ExperimentConfig(seed, sections)
        if self.verbose and self.logger:
            self.logger.info("Read %s: sections %s, seed %d, hash %s", self.path,
                             ", ".join(sorted(sections)), seed, self.config.configHash())
        return self.config

    def readVersion(self, root):
        """ Check the format version of the document. """
        text = root.attrib.get("format")
        if text is None:
            raise ConfigurationError("experiment has no format version")
        try:
            version = int(text)
        except ValueError:
            raise ConfigurationError("bad format version", text)
        if version != self._formatVersion:
            raise ConfigurationError("unsupported format version", version)

    def readSeed(self, root):
        if self.seedOverride is not None:
            return _checkSeed(self.seedOverride)
        text = root.attrib.get("seed")
        if text is None:
            raise ConfigurationError("experiment has no master seed")
        try:
            seed = int(text)
        except ValueError:
            raise ConfigurationError("bad master seed", text)
        return _checkSeed(seed)

    def _readAttributes(self, element, schema):
        unknown = [name for name in element.attrib if name not in schema]
        if unknown:
            raise ConfigurationError("unknown attribute for %s" % element.tag, unknown[0])
        values = {}
        for name, (parse, default) in sorted(schema.items()):
            text = element.attrib.get(name)
            if text is None:
                values[name] = default
                continue
            try:
                values[name] = parse(text)
            except ValueError as error:
                raise ConfigurationError("bad value for %s.%s" % (element.tag, name), "%s (%s)" % (text, error))
        return values

    def readTabularContract(self, element):
        """ Read the tabular-contract section with its explicit MDPs. """
        section = self._readAttributes(element, SECTION_ATTRIBUTES["tabular-contract"])
        section["mdps"] = []
        for child in element:
            if child.tag != "mdp":
                raise ConfigurationError("unknown element in tabular-contract", child.tag)
            section["mdps"].append(self.readMdp(child, section["gamma"]))
        return section

    def readMdp(self, element, gamma):
        """
        Build and validate one explicit MDP. The policy defaults to uniform,
        the noise to the identity; without allowed sets the kernel's support
        is allowed. Returns plain lists.
        """
        values = self._readAttributes(element, MDP_ATTRIBUTES)
        for name in ("states", "actions", "transition", "reward"):
            if values[name] is None:
                raise ConfigurationError("mdp needs a %s attribute" % name)
        n, m = values["states"], values["actions"]

        def shaped(name, shape):
            data = values[name]
            if len(data) != int(np.prod(shape)):
                raise ConfigurationError("mdp %s needs %d entries" % (name, int(np.prod(shape))), len(data))
            return np.reshape(data, shape)

        mdp = TabularMDP(shaped("transition", (n, m, n)), shaped("reward", (n, m, n)),
                         gamma if values["gamma"] is None else values["gamma"])
        pi = Policy.uniform(n, m) if values["policy"] is None else Policy(shaped("policy", (n, m)))
        if values["kernel"] is None:
            if values["allowed"] is not None:
                raise ConfigurationError("mdp allowed sets need a kernel")
            noise = TabularNoise.identity(n)
        else:
            kernel = shaped("kernel", (n, n))
            allowed = values["allowed"]
            if allowed is None:
                allowed = [set(np.flatnonzero(row).tolist()) | {s} for s, row in enumerate(kernel)]
            elif len(allowed) != n:
                raise ConfigurationError("mdp needs one allowed set per state", len(allowed))
            noise = TabularNoise(kernel, allowed)
        return dict(mdp=mdp.asDict(), policy=pi.asDict(), noise=noise.asDict())

    def readTrain(self, element):
        """ Read the train section with its agents and injections. """
        train = self._readAttributes(element, SECTION_ATTRIBUTES["train"])
        agents = []
        injections = []
        for child in element:
            if child.tag == "agent":
                agent = self._readAttributes(child, AGENT_ATTRIBUTES)
                if agent["loss"] is None:
                    raise ConfigurationError("agent needs a loss attribute")
                agents.append(agent)
            elif child.tag == "injection":
                injection = self._readAttributes(child, INJECTION_ATTRIBUTES)
                if injection["site"] is None:
                    injection["site"] = train["site"]
                if injection["kind"] == "none" or injection["site"] == "none":
                    injection.update(kind="none", site="none", strength=0.0)
                injections.append(injection)
            else:
                raise ConfigurationError("unknown element in train", child.tag)
        if not agents:
            agents = [dict(dict.fromkeys(AGENT_ATTRIBUTES), loss=loss) for loss in ("least_squares", "histogram")]
        if train["matrix"] == "preset":
            injections = presetInjections(train["env"], train["site"]) + injections
        elif not injections:
            injections = presetInjections(train["env"], train["site"])[:1]
        train["agents"] = agents
        train["injections"] = injections
        return train

    def process(self, outputFolder, sections=None, workers=1):
        """
        Run the subcommands of the document, in document order of
        SUBCOMMANDS, or only those named in sections. Results are stored
        in self.results by subcommand name.
        """
        from snmdpLab.lab.runners import RUNNERS
        config = self.read()
        if sections is None:
            sections = [name for name in SUBCOMMANDS if name in config]
        for name in sections:
            if name not in config:
                raise ConfigurationError("document has no section", name)
        if not os.path.exists(outputFolder):
            os.makedirs(outputFolder)
        for index, name in enumerate(sections):
            self.reportProgress("generate", 'start', name, index / float(max(1, len(sections))))
            try:
                self.results[name] = RUNNERS[name](config, outputFolder, workers=workers,
                                                   verbose=self.verbose, logger=self.logger,
                                                   progressFunc=self.progressFunc)
            except LabError as error:
                self.reportProgress("error", 'stop', "%s: %s" % (name, error))
                if self.verbose and self.logger:
                    self.logger.info("%s failed: %s", name, error)
                raise
            self.reportProgress("generate", 'stop', name)
        if self.verbose and self.logger:
            self.logger.info('Done')
        self.reportProgress("done", 'stop')
        return self.results
