import io

import numpy as np
import pytest
from PIL import Image

from chartrl.embedding import FeatureVector
from chartrl.model import AnswerType, ChartSample, Provenance, QACategory, QAItem, QASet


def solid_png(color, size=(64, 64)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", size, color).save(buf, format="PNG")
    return buf.getvalue()


def striped_png(stripe: int, size=(64, 64)) -> bytes:
    """Deterministic structured image; different stripe widths embed apart."""
    img = Image.new("L", size, 255)
    pixels = img.load()
    for x in range(size[0]):
        for y in range(size[1]):
            if (x // stripe) % 2 == 0:
                pixels[x, y] = 0
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def make_qa_item(
    question="Is this a bar chart?",
    answer_type=AnswerType.BOOL,
    gold_answer=True,
    category=QACategory.CHART_TYPE,
    tolerance=None,
) -> QAItem:
    return QAItem(
        question=question,
        answer_type=answer_type,
        gold_answer=gold_answer,
        category=category,
        tolerance=tolerance,
    )


def conforming_qa_set(source_image_id="sample-0") -> QASet:
    """The exact 1/1/2/1/3/2 distribution with 10%-of-gold tolerances."""
    items = (
        make_qa_item("Is this a bar chart?", category=QACategory.CHART_TYPE),
        make_qa_item("Is the legend at the top?", category=QACategory.LAYOUT, gold_answer=False),
        make_qa_item("Is the title 'Revenue'?", category=QACategory.TEXT_POSITIVE),
        make_qa_item("Is the x label 'Year'?", category=QACategory.TEXT_POSITIVE),
        make_qa_item("Does the title mention 2050?", category=QACategory.TEXT_NEGATIVE, gold_answer=False),
        make_qa_item("What is the first value?", AnswerType.FLOAT, 50.0, QACategory.DATA_ACCURACY, tolerance=5.0),
        make_qa_item("What is the second value?", AnswerType.FLOAT, 30.0, QACategory.DATA_ACCURACY, tolerance=3.0),
        make_qa_item("What is the peak value?", AnswerType.FLOAT, 80.0, QACategory.DATA_ACCURACY, tolerance=8.0),
        make_qa_item("Are the bars red?", category=QACategory.STYLE, gold_answer=False),
        make_qa_item("Is the line dashed?", category=QACategory.STYLE, gold_answer=False),
    )
    return QASet(items=items, source_image_id=source_image_id)


def make_sample(sample_id="sample-0", image=None, **kwargs) -> ChartSample:
    return ChartSample(
        id=sample_id,
        image=image if image is not None else solid_png("white"),
        provenance=kwargs.pop("provenance", Provenance.SOURCE_DATASET),
        **kwargs,
    )


class FakeEncoder:
    """Test encoder returning preset vectors keyed by exact image bytes."""

    kind = "deterministic-stub"
    encoder_id = "fake"

    def __init__(self, mapping, dimension=2):
        self.mapping = {bytes(k): np.asarray(v, dtype=np.float64) for k, v in mapping.items()}
        self.dimension = dimension

    def embed(self, image: bytes) -> FeatureVector:
        return FeatureVector(values=self.mapping[bytes(image)], encoder_id=self.encoder_id)


@pytest.fixture
def white_png() -> bytes:
    return solid_png("white")


@pytest.fixture
def black_png() -> bytes:
    return solid_png("black")
