import pytest

from uika.corpus import PosLexicon
from uika.model import ModelConfig
from uika.retrieval import SampleConfig
from uika.synth import SynthConfig, generate_benchmark
from uika.training import Components, PipelineConfig, StageConfig


@pytest.fixture
def lexicon():
    return PosLexicon(
        nouns=frozenset({"food", "service", "phone", "battery", "life", "price", "staff"}),
        stopwords=frozenset({"the", "a", "is", "was", "to", "you", "its", "no", "but",
                             "also", "there", "when", "let", "know", "and", "it"}),
    )


@pytest.fixture(scope="session")
def micro_bench():
    """Small synthetic benchmark for fast pipeline-level tests."""
    return generate_benchmark(SynthConfig(sd_size=120, td_train_size=40, td_test_size=20,
                                          embed_dim=8, seed=99))


@pytest.fixture(scope="session")
def micro_config():
    """Pipeline config sized for sub-second runs on the micro benchmark."""
    return PipelineConfig(
        sample=SampleConfig(n=10, k=5, strategy="coarse2fine"),
        model=ModelConfig(embed_dim=8, kernel_widths=(2, 3), filters=4, num_classes=3, dropout=0.2),
        stage1=StageConfig(epochs=2, batch_size=32),
        stage2=StageConfig(epochs=2, batch_size=16),
        stage3=StageConfig(epochs=2, batch_size=16),
        components=Components(),
        seed=0,
    )
