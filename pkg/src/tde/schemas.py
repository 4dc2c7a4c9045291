"""Variable tables for the clinical datasets TDE was evaluated on.

Each table lists the source variables in their published index order; static
variables come first.  Categories for categorical variables are left open
(``None``) and inferred from the data at load time, except where the coding is
fixed by the challenge documentation.
"""

from __future__ import annotations

from tde.data import Schema, VariableSpec

_N = "numerical"
_C = "categorical"

PHYSIONET_2012 = [
    ("Age", True, _N),
    ("Gender", True, _C),
    ("Height", True, _N),
    ("ICUType", True, _C),
    ("Albumin", False, _N),
    ("ALP", False, _N),
    ("ALT", False, _N),
    ("AST", False, _N),
    ("Bilirubin", False, _N),
    ("BUN", False, _N),
    ("Cholesterol", False, _N),
    ("Creatinine", False, _N),
    ("DiasABP", False, _N),
    ("FiO2", False, _N),
    ("GCS", False, _N),
    ("Glucose", False, _N),
    ("HCO3", False, _N),
    ("HCT", False, _N),
    ("HR", False, _N),
    ("K", False, _N),
    ("Lactate", False, _N),
    ("Mg", False, _N),
    ("MAP", False, _N),
    ("MechVent", False, _C),
    ("Na", False, _N),
    ("NIDiasABP", False, _N),
    ("NIMAP", False, _N),
    ("NISysABP", False, _N),
    ("PaCO2", False, _N),
    ("PaO2", False, _N),
    ("pH", False, _N),
    ("Platelets", False, _N),
    ("RespRate", False, _N),
    ("SaO2", False, _N),
    ("SysABP", False, _N),
    ("Temp", False, _N),
    ("TroponinI", False, _N),
    ("TroponinT", False, _N),
    ("Urine", False, _N),
    ("WBC", False, _N),
    ("Weight", False, _N),
]

MIMIC_III = [
    ("Age", True, _N),
    ("Gender", True, _C),
    ("DBP", False, _N),
    ("FiO2", False, _N),
    ("Glucose", False, _N),
    ("HR", False, _N),
    ("pH", False, _N),
    ("RR", False, _N),
    ("SBP", False, _N),
    ("SpO2", False, _N),
    ("Temp(C)", False, _N),
    ("Temp(F)", False, _N),
    ("TGCS", False, _N),
]

PHYSIONET_2019 = [
    ("Age", True, _N),
    ("Gender", True, _C),
    ("Unit1", True, _C),
    ("Unit2", True, _C),
    ("HospAdmTime", True, _N),
] + [
    (name, False, _N)
    for name in (
        "HR O2Sat Temp SBP MAP DBP Resp EtCO2 BaseExcess HCO3 FiO2 pH PaCO2 SaO2 AST BUN "
        "Alkalinephos Calcium Chloride Creatinine Bilirubin_direct Glucose Lactate Magnesium "
        "Phosphate Potassium Bilirubin_total TroponinI Hct Hgb PTT WBC Fibrinogen Platelets"
    ).split()
]

_FIXED_CATEGORIES = {
    ("physionet2012", "Gender"): ("0", "1"),
    ("physionet2012", "ICUType"): ("1", "2", "3", "4"),
    ("physionet2012", "MechVent"): ("0", "1"),
    ("physionet2019", "Gender"): ("0", "1"),
    ("physionet2019", "Unit1"): ("0", "1"),
    ("physionet2019", "Unit2"): ("0", "1"),
}

_TABLES = {"physionet2012": PHYSIONET_2012, "mimic3": MIMIC_III, "physionet2019": PHYSIONET_2019}


def builtin_schema(name: str, n_classes: int = 2) -> Schema:
    """Return the schema for ``physionet2012``, ``mimic3`` or ``physionet2019``."""
    try:
        table = _TABLES[name]
    except KeyError:
        raise KeyError(f"unknown built-in schema {name!r}; choose from {sorted(_TABLES)}") from None
    specs = tuple(
        VariableSpec(
            name=var,
            kind=kind,
            static=static,
            categories=_FIXED_CATEGORIES.get((name, var)),
        )
        for var, static, kind in table
    )
    return Schema(specs=specs, n_classes=n_classes)
