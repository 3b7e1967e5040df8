"""Domain model: the service universe, patients, plans and interaction predictors.

A care plan is a set of service indices. Risk models never see services or
patient characteristics directly; they see *interaction predictors*, each
tying together either two services or one service and one characteristic,
plus one dedicated length-of-stay slot appended to every feature vector.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

# Coefficient key for the length-of-stay slot, which is not an interaction.
LOS_KEY = "los"

SERVICE_SERVICE = "ss"
SERVICE_CHARACTERISTIC = "sc"

# The seven service category labels used by the default catalogs.
CATEGORIES = (
    "Assistive",
    "Medical",
    "Agency provided",
    "Personal care",
    "Therapy",
    "Counselling",
    "Services provided to family",
)


class SchemaError(ValueError):
    """A name, code or index does not match the loaded catalog/cohort schema."""


@dataclass(frozen=True)
class Service:
    index: int
    code: str
    category: str


@dataclass(frozen=True)
class ServiceCatalog:
    """Ordered universe of selectable services, indexed 0..S-1."""

    services: tuple[Service, ...]
    _code_to_index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.services) < 2:
            raise SchemaError("catalog needs at least 2 services")
        for i, svc in enumerate(self.services):
            if svc.index != i:
                raise SchemaError(f"service indices must be contiguous, got {svc.index} at {i}")
        codes = [s.code for s in self.services]
        if len(set(codes)) != len(codes):
            raise SchemaError("duplicate service codes in catalog")
        object.__setattr__(self, "_code_to_index", {s.code: s.index for s in self.services})

    def __len__(self):
        return len(self.services)

    def index_of(self, code: str) -> int:
        try:
            return self._code_to_index[code]
        except KeyError:
            raise SchemaError(f"unknown service code {code!r}") from None

    def code_of(self, index: int) -> str:
        return self.services[index].code

    def plan_from_codes(self, codes) -> frozenset[int]:
        plan = frozenset(self.index_of(c) for c in codes)
        if len(plan) != len(list(codes)):
            raise SchemaError("duplicate service codes in plan")
        return plan

    def codes_of_plan(self, plan) -> list[str]:
        return [self.services[i].code for i in sorted(plan)]


@dataclass(frozen=True)
class PatientRecord:
    """One patient: characteristics, length of stay, observed plan and outcome."""

    id: str
    characteristics: dict[str, float]
    los: float
    observed_plan: frozenset[int]
    observed_outcome: int

    def __post_init__(self):
        if self.los < 0:
            raise SchemaError(f"patient {self.id}: los must be nonnegative")
        for name, value in self.characteristics.items():
            if not math.isfinite(value):
                raise SchemaError(f"patient {self.id}: characteristic {name!r} not finite")

    def characteristic(self, name: str) -> float:
        try:
            return self.characteristics[name]
        except KeyError:
            raise SchemaError(f"unknown characteristic {name!r}") from None


@dataclass(frozen=True)
class Predictor:
    """An interaction term: two services, or one service and one characteristic.

    Service-service predictors are canonical with left < right; a service
    never interacts with itself.
    """

    id: int
    kind: str
    left: int
    right: object  # service index for "ss", characteristic name for "sc"

    def __post_init__(self):
        if self.kind == SERVICE_SERVICE:
            if not (isinstance(self.right, int) and self.left < self.right):
                raise SchemaError(f"predictor {self.id}: service pair must have left < right")
        elif self.kind == SERVICE_CHARACTERISTIC:
            if not isinstance(self.right, str):
                raise SchemaError(f"predictor {self.id}: characteristic name must be a string")
        else:
            raise SchemaError(f"predictor {self.id}: unknown kind {self.kind!r}")


def enumerate_predictors(catalog: ServiceCatalog, characteristic_names) -> list[Predictor]:
    """Canonical enumeration of every candidate interaction for this schema.

    All service pairs (left < right) come first, then service x characteristic
    terms; ids are the position in this list and are stable for a given
    (catalog size, characteristic name order).
    """
    preds = []
    n = len(catalog)
    for a in range(n):
        for b in range(a + 1, n):
            preds.append(Predictor(len(preds), SERVICE_SERVICE, a, b))
    for s in range(n):
        for name in characteristic_names:
            preds.append(Predictor(len(preds), SERVICE_CHARACTERISTIC, s, name))
    return preds


def evaluate_predictor(p: Predictor, patient: PatientRecord, plan) -> float:
    """Value of one interaction for a patient under a candidate plan."""
    if p.kind == SERVICE_SERVICE:
        return 1.0 if (p.left in plan and p.right in plan) else 0.0
    if p.left in plan:
        return float(patient.characteristic(p.right))
    return 0.0


def featurize(patient: PatientRecord, plan, predictors) -> np.ndarray:
    """Dense feature vector: one slot per predictor plus the trailing LOS slot."""
    x = np.empty(len(predictors) + 1)
    for i, p in enumerate(predictors):
        x[i] = evaluate_predictor(p, patient, plan)
    x[-1] = patient.los
    return x


def plan_space_size(n_services: int, plan_size: int) -> dict[str, int]:
    """Count distinct plans of a given size, and leaves of the ordered search tree."""
    if not 0 <= plan_size <= n_services:
        raise ValueError("plan size must be between 0 and the catalog size")
    return {
        "combinations": math.comb(n_services, plan_size),
        "ordered_leaves": math.perm(n_services, plan_size),
    }


def default_catalog(n_services: int) -> ServiceCatalog:
    """Synthetic catalog with home-care style codes, cycling the category labels."""
    codes = _DEFAULT_CODES[:n_services]
    codes += tuple(f"SVC{i:03d}" for i in range(len(codes), n_services))
    return ServiceCatalog(
        tuple(Service(i, code, CATEGORIES[i % len(CATEGORIES)]) for i, code in enumerate(codes))
    )


_DEFAULT_CODES = (
    "SKILLED", "WLKCANE", "SAFETY", "MEDICATE", "AGENCYSP", "ADLSRVCE", "SHOWBATH",
    "ADLACT", "PHYTHERA", "EQUIPMNT", "ORTHOTIC", "PHARMACY", "PARENTIV", "DIETSRV",
    "ABUSIVE", "APNEA", "RESTHERA", "TRANEQUP", "BEDTABLE", "CAM", "DEVSPPRT",
    "EATDEVIC", "WOUNDS", "RESPSRVC", "PHYSICIAN", "ENTEROST", "OSTOMY", "DIETARY",
    "DIETCOUN", "GRABBARS", "CHAIRS", "OCCTHERA", "SPEECHTH", "OXYGEN", "IVPUMP",
    "GLUCOSE", "MOTORCRT", "BEDCOMM", "TRANSPRT", "MEALS", "VOLUNTER", "ETHICCON",
    "SPIRITSV", "BEREAVE", "MEDMGMT", "HOMEMAKE", "COMPANION", "RESPITE", "INTERPRT",
    "PODIATRY", "DENTAL", "VISION", "HEARING", "SOCLWORK", "MENTALHL", "IVTHERA",
    "CATHETER", "TRACHEO", "VENTILAT", "NEBULIZR", "HOSPBED", "LIFTCHR", "COMMODE",
    "DRESSING", "INCONTIN", "TELEMON", "EMERRESP", "HOMEHLTH", "NUTRIIV",
)


# ---------------------------------------------------------------------------
# File formats: catalog {"services": [...]}, cohort {"patients": [...]}.

def catalog_to_json(catalog: ServiceCatalog) -> dict:
    return {
        "services": [
            {"index": s.index, "code": s.code, "category": s.category}
            for s in catalog.services
        ]
    }


def catalog_from_json(doc: dict) -> ServiceCatalog:
    try:
        services = tuple(
            Service(int(e["index"]), str(e["code"]), str(e["category"]))
            for e in doc["services"]
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed catalog document: {exc}") from exc
    return ServiceCatalog(tuple(sorted(services, key=lambda s: s.index)))


def cohort_to_json(cohort, catalog: ServiceCatalog) -> dict:
    return {
        "patients": [
            {
                "id": p.id,
                "characteristics": p.characteristics,
                "los": p.los,
                "plan": catalog.codes_of_plan(p.observed_plan),
                "outcome": p.observed_outcome,
            }
            for p in cohort
        ]
    }


def cohort_from_json(doc: dict, catalog: ServiceCatalog) -> list[PatientRecord]:
    try:
        entries = doc["patients"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed cohort document: {exc}") from exc
    cohort = []
    for e in entries:
        try:
            cohort.append(
                PatientRecord(
                    id=str(e["id"]),
                    characteristics={str(k): float(v) for k, v in e["characteristics"].items()},
                    los=float(e["los"]),
                    observed_plan=catalog.plan_from_codes(e["plan"]),
                    observed_outcome=int(e["outcome"]),
                )
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed patient entry: {exc}") from exc
    return cohort


def load_json(path):
    """Parse a UTF-8 JSON file, pointing at the offending line on failure."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def save_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
