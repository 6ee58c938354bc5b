"""Default feature catalogues for the episodic schema."""

# (name, relative observation frequency, normalised to Basophils = 1)
TIME_VARIANT_SIGNALS = (
    ("Anion gap", 0.21),
    ("Bicarbonate", 1.18),
    ("Blood urea nitrogen", 0.22),
    ("Chloride (blood)", 0.22),
    ("Creatinine (blood)", 0.59),
    ("Diastolic blood pressure", 1.01),
    ("Heart Rate", 7.22),
    ("Hematocrit", 1.223),
    ("Hemoglobin", 6.42),
    ("Mean blood pressure", 1.15),
    ("Mean corpuscular hemoglobin", 1.48),
    ("Platelets", 1.43),
    ("Potassium", 1.12),
    ("Red blood cell count (blood)", 0.24),
    ("Sodium", 1.22),
    ("Systolic blood pressure", 6.35),
    ("White blood cell count (blood)", 0.29),
    ("Albumin", 0.24),
    ("Alkaline phosphate", 1.12),
    ("Basophils", 1.0),
    ("Bilirubin (total)", 1.34),
    ("CO2 (ETCO2, PCO2, etc.)", 0.59),
    ("Calcium (total)", 0.8),
    ("Calcium ionized", 1.33),
    ("Eosinophils", 0.37),
    ("Lactate", 0.68),
    ("Lactic acid", 1.12),
    ("Magnesium", 0.29),
    ("Monocytes", 0.23),
    ("Partial pressure of carbon dioxide", 1.03),
    ("Partial thromboplastin time", 1.16),
    ("Prothrombin time", 0.23),
    ("pH (blood)", 0.09),
    ("Asparate aminotransferase", 0.75),
    ("Oxygen saturation", 3.87),
    ("Phosphate", 6.62),
    ("Fraction inspired oxygen", 6.43),
    ("Temperature (C)", 1.11),
)

SIGNAL_NAMES = tuple(name for name, _ in TIME_VARIANT_SIGNALS)
SIGNAL_FREQUENCIES = tuple(freq for _, freq in TIME_VARIANT_SIGNALS)
HEART_RATE = SIGNAL_NAMES.index("Heart Rate")
BASOPHILS = SIGNAL_NAMES.index("Basophils")

DEMOGRAPHICS = ("age", "gender", "ethnicity")

COMORBIDITIES = (
    "congestive heart failure",
    "cardiac arrhythmias",
    "valvular disease",
    "pulmonary circulation",
    "peripheral vascular",
    "hypertension",
    "paralysis",
    "other neurological",
    "chronic pulmonary",
    "diabetes uncomplicated",
    "diabetes complicated",
    "hypothyroidism",
    "renal failure",
    "liver disease",
    "peptic ulcer",
    "aids",
    "lymphoma",
    "metastatic cancer",
    "solid tumor",
    "rheumatoid arthritis",
    "coagulopathy",
    "obesity",
    "weight loss",
    "fluid electrolyte",
    "blood loss anemia",
    "deficiency anemias",
    "alcohol abuse",
    "drug abuse",
    "psychoses",
    "depression",
)


def static_feature_names(u: int = 38) -> tuple:
    """Names for ``u`` static columns; named flags are padded with generic ones."""
    names = list(DEMOGRAPHICS) + list(COMORBIDITIES)
    extra = [f"other comorbidity {k}" for k in range(max(0, u - len(names)))]
    return tuple((names + extra)[:u])
