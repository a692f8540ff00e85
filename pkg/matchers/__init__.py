from matchers.builtin import BuiltinMatcher
from matchers.external import ExternalMatcher, parse_matcher_spec
from matchers.similarity import CandidateRanking, SimilarityMatrix, mutual_nearest, predict
