from hypothesis import HealthCheck, settings

# replayable: examples come from a fixed derivation, not the wall clock
settings.register_profile(
    "fixlab",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("fixlab")
