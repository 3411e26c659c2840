"""Shared synthetic data helpers for the test suite.

synth_series generates a patient whose next-day measurements are a known
(nearly linear) function of the previous day's features plus Gaussian noise,
so tests can compare learned models against the generating process.
"""

import datetime as dt

import numpy as np

from onlc.records import DailyRecord

START = dt.date(2023, 1, 1)


def synth_series(
    rng: np.random.Generator,
    n_days: int,
    *,
    a0=40.0,
    a_carb=0.7,
    a_prev=0.3,
    a_steps=2.0,
    k_base=0.1,
    k_fat=0.004,
    k_carb=0.002,
    k_prev=0.3,
    basal=655.0,
    noise_g=2.0,
    noise_k=0.05,
    noise_w=0.15,
    glucose0=120.0,
    weight0=210.0,
    ketone0=0.4,
    carb_range=(20.0, 60.0),
    fat_range=(60.0, 150.0),
    fiber_range=(20.0, 50.0),
    protein_range=(40.0, 110.0),
    steps_range=(2000.0, 12000.0),
    activity_range=(300.0, 1200.0),
    start=START,
    drift=None,
):
    """One synthetic patient. `drift`, if given, maps day index -> extra
    glucose-per-carb coefficient added to a_carb that day."""
    glucose, weight, ketone = float(glucose0), float(weight0), float(ketone0)
    records = []
    for i in range(n_days):
        carb = rng.uniform(*carb_range)
        fat = rng.uniform(*fat_range)
        fiber = rng.uniform(*fiber_range)
        protein = rng.uniform(*protein_range)
        steps = rng.uniform(*steps_range)
        activity = rng.uniform(*activity_range)
        intake, _ = 4.0 * carb + 9.0 * fat + 4.0 * protein, None
        records.append(
            DailyRecord(
                date=start + dt.timedelta(days=i),
                net_carb=carb,
                fat=fat,
                fiber=fiber,
                protein=protein,
                intake_calories=intake,
                activity_calories=activity,
                steps=steps,
                glucose=glucose,
                ketone=max(ketone, 0.05),
                weight=weight,
            )
        )
        carb_coef = a_carb + (drift(i) if drift is not None else 0.0)
        glucose = max(
            a0 + carb_coef * carb + a_prev * glucose - a_steps * steps / 1000.0
            + rng.normal(0.0, noise_g),
            40.0,
        )
        ketone = max(
            k_base + k_prev * ketone + k_fat * fat - k_carb * carb + rng.normal(0.0, noise_k),
            0.05,
        )
        weight = weight + (intake - activity - basal) / 3500.0 + rng.normal(0.0, noise_w)
    return records
