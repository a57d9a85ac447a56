from auscult.data import synthetic_tone_noise_dataset

# verdict lines collected by the acceptance gate; printed after the run so
# they survive pytest's fd-level capture
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


def make_tone_noise_dataset(n_clips=60, duration_s=2.0, seed=0, sample_rate=16000):
    return synthetic_tone_noise_dataset(
        n_clips=n_clips, duration_s=duration_s, seed=seed, sample_rate=sample_rate
    )
