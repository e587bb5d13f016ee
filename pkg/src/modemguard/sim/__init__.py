from .scenario import (
    ForcedDegradation, GroundTruthEvent, LinkState, ManualOperator, OracleRestartPolicy,
    Outage, Phase, RestartStatus, ScenarioResult, SimConfig, Simulator, chain_hooks, load_outages,
    load_truth, run_scenario, save_outages, save_truth,
)

__all__ = [
    "ForcedDegradation", "GroundTruthEvent", "LinkState", "ManualOperator", "OracleRestartPolicy",
    "Outage", "Phase", "RestartStatus", "ScenarioResult", "SimConfig", "Simulator", "chain_hooks",
    "load_outages", "load_truth", "run_scenario", "save_outages", "save_truth",
]
