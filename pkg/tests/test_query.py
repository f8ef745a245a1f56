import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from metatox.errors import EmptyIndex, NodeNotInGraph
from metatox.kg_store import KnowledgeGraph
from metatox.llm_gateway import LlmGateway, MockProvider, MockRule
from metatox.query import (
    KnowledgeItem,
    PathStrategy,
    QueryConfig,
    RetrievedKnowledge,
    extract_entities,
    format_knowledge,
    map_nodes,
    query_graph,
    rank_filter,
    retrieve_paths,
    shortest_path,
)

import oracles
from conftest import edge

WORDS = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"]

graph_strategy = st.lists(
    st.tuples(st.sampled_from(WORDS), st.sampled_from(["r1", "r2", "r3"]),
              st.sampled_from(WORDS)),
    min_size=1, max_size=20,
).map(lambda spos: KnowledgeGraph([
    edge(s, p, o) for s, p, o in dict.fromkeys(spos)
]))


def ner_gateway(templates, response):
    return LlmGateway(MockProvider([MockRule("Speech:", response=response)]),
                      templates, max_retries=0)


def by_id(samples, sample_id):
    return next(s for s in samples if s.id == sample_id)


class TestExtractEntities:
    @pytest.mark.parametrize("response,expected", [
        ("immigrants\nvermin", ["immigrants", "vermin"]),
        ("- immigrants\n* vermin\n• crime", ["immigrants", "vermin", "crime"]),
        ("1. immigrants\n2) vermin", ["immigrants", "vermin"]),
        ("immigrants\n\n  \nvermin", ["immigrants", "vermin"]),
        ("immigrants\nimmigrants\nvermin", ["immigrants", "vermin"]),
        ("", []),
    ])
    def test_parsing(self, templates, response, expected):
        gateway = ner_gateway(templates, response)
        assert extract_entities("whatever speech", gateway) == expected

    def test_fixture_rules(self, detect_gateway_mock, test_samples):
        text = by_id(test_samples, "d01").text
        assert extract_entities(text, detect_gateway_mock) == ["immigrants", "vermin"]
        assert extract_entities(by_id(test_samples, "d03").text, detect_gateway_mock) == []


class TestMapNodes:
    def test_identity_surface_maps_at_full_similarity(self, toy_graph, embedder):
        mapped = map_nodes(["immigrants"], toy_graph, embedder)
        assert len(mapped) == 1
        assert mapped[0].node == "immigrants"
        assert mapped[0].similarity == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("entity,node", [
        ("caravans", "immigrant caravans"),
        ("LGBTQ+ people", "LGBT people"),
        ("kitchen", "the kitchen"),
    ])
    def test_near_surface_maps(self, toy_graph, embedder, entity, node):
        mapped = map_nodes([entity], toy_graph, embedder)
        assert [m.node for m in mapped] == [node]
        assert mapped[0].surface == entity
        assert mapped[0].similarity == pytest.approx(
            oracles.text_cosine(entity, node), abs=1e-12
        )
        assert mapped[0].similarity >= 0.55

    @pytest.mark.parametrize("entity", [
        "white nationalist", "america", "bankers", "family",
    ])
    def test_weak_match_dropped(self, toy_graph, embedder, entity):
        assert map_nodes([entity], toy_graph, embedder) == []

    def test_floor_is_configurable(self, toy_graph, embedder):
        sim = oracles.text_cosine("bankers", "the banks")
        assert map_nodes(["bankers"], toy_graph, embedder, floor=sim)[0].node == "the banks"

    def test_duplicate_target_first_wins(self, toy_graph, embedder):
        mapped = map_nodes(["kitchen", "the kitchen"], toy_graph, embedder)
        assert [(m.surface, m.node) for m in mapped] == [("kitchen", "the kitchen")]

    def test_empty_entities(self, toy_graph, embedder):
        assert map_nodes([], toy_graph, embedder) == []

    def test_empty_graph_rejected(self, embedder):
        with pytest.raises(EmptyIndex):
            map_nodes(["anything"], KnowledgeGraph(), embedder)


class TestShortestPath:
    def test_source_equals_target(self, toy_graph):
        assert shortest_path(toy_graph, "crime", "crime") == ["crime"]

    def test_direct_edge(self, toy_graph):
        assert shortest_path(toy_graph, "immigrants", "vermin") == ["immigrants", "vermin"]

    def test_multi_hop(self, toy_graph):
        assert shortest_path(toy_graph, "immigrant caravans", "vermin") == [
            "immigrant caravans", "crime", "immigrants", "vermin"
        ]

    def test_disconnected_returns_none(self, toy_graph):
        assert shortest_path(toy_graph, "women", "crime") is None

    def test_lexicographic_tie_break(self):
        graph = KnowledgeGraph([
            edge("a", "r", "b"), edge("b", "r", "d"),
            edge("a", "r", "c"), edge("c", "r", "d"),
        ])
        assert shortest_path(graph, "a", "d") == ["a", "b", "d"]

    @settings(max_examples=100, deadline=None)
    @given(graph_strategy, st.data())
    def test_matches_networkx_reference(self, graph, data):
        nodes = sorted(graph.nodes)
        source = data.draw(st.sampled_from(nodes))
        target = data.draw(st.sampled_from(nodes))
        got = shortest_path(graph, source, target)

        reference = nx.Graph()
        reference.add_nodes_from(nodes)
        reference.add_edges_from((e.subject, e.object) for e in graph.edges)
        if not nx.has_path(reference, source, target):
            assert got is None
        else:
            want = min(tuple(p) for p in nx.all_shortest_paths(reference, source, target))
            assert got == list(want)


class TestRetrievePaths:
    def test_direct_pair(self, toy_graph):
        got = retrieve_paths(toy_graph, ["immigrants", "vermin"])
        assert got == {("immigrants", "are called", "vermin")}

    def test_chain_collects_every_hop(self, toy_graph):
        got = retrieve_paths(toy_graph, ["immigrant caravans", "vermin"])
        assert got == {
            ("immigrant caravans", "bring", "crime"),
            ("immigrants", "are linked to", "crime"),
            ("immigrants", "are called", "vermin"),
        }

    def test_disconnected_pair_contributes_nothing(self, toy_graph):
        assert retrieve_paths(toy_graph, ["women", "crime"]) == set()

    def test_single_node_yields_nothing_on_shortest_path(self, toy_graph):
        assert retrieve_paths(toy_graph, ["crime"]) == set()

    def test_duplicate_nodes_deduplicated(self, toy_graph):
        assert retrieve_paths(toy_graph, ["vermin", "vermin"]) == set()

    def test_unknown_node_raises(self, toy_graph):
        with pytest.raises(NodeNotInGraph):
            retrieve_paths(toy_graph, ["not a node"])

    def test_parallel_edges_take_smallest_triplet(self):
        graph = KnowledgeGraph([
            edge("a", "zzz", "b"), edge("a", "aaa", "b"), edge("b", "mmm", "a"),
        ])
        assert retrieve_paths(graph, ["a", "b"]) == {("a", "aaa", "b")}

    def test_one_hop_is_incident_union(self, toy_graph):
        got = retrieve_paths(toy_graph, ["immigrants", "vermin"], PathStrategy.ONE_HOP)
        assert got == {
            ("immigrants", "are called", "vermin"),
            ("immigrants", "are linked to", "crime"),
        }

    def test_one_hop_single_node_keeps_neighborhood(self, toy_graph):
        got = retrieve_paths(toy_graph, ["crime"], PathStrategy.ONE_HOP)
        assert got == {
            ("immigrant caravans", "bring", "crime"),
            ("immigrants", "are linked to", "crime"),
        }

    @settings(max_examples=100, deadline=None)
    @given(graph_strategy, st.data())
    def test_matches_reference_union(self, graph, data):
        nodes = sorted(graph.nodes)
        subset = data.draw(st.lists(st.sampled_from(nodes), min_size=1, max_size=4))
        spos = [e.spo for e in graph.edges]
        assert retrieve_paths(graph, subset) == oracles.path_triplet_union(
            nodes, spos, subset
        )
        assert retrieve_paths(graph, subset, PathStrategy.ONE_HOP) == oracles.one_hop_union(
            spos, subset
        )


class TestFormatKnowledge:
    def test_joins_with_single_spaces(self):
        sentence = format_knowledge(("white lives matter", "is against", "black lives matter"))
        assert sentence == "white lives matter is against black lives matter"

    def test_no_extra_punctuation(self):
        assert format_knowledge(("a", "b", "c")) == "a b c"


class TestRankFilter:
    CHAIN = {
        ("immigrant caravans", "bring", "crime"),
        ("immigrants", "are linked to", "crime"),
        ("immigrants", "are called", "vermin"),
    }
    D09_TEXT = "vermin caravans are crossing the border again"

    def test_floor_drops_weak_sentence(self, embedder):
        knowledge = rank_filter(self.CHAIN, self.D09_TEXT, embedder)
        assert [(i.sentence, i.similarity) for i in knowledge.items] == [
            ("immigrants are called vermin", pytest.approx(0.3634218922, abs=1e-10)),
            ("immigrant caravans bring crime", pytest.approx(0.3510989038, abs=1e-10)),
        ]

    def test_matches_reference(self, embedder):
        got = rank_filter(self.CHAIN, self.D09_TEXT, embedder, floor=0.1, top_k=5)
        want = oracles.rank_candidates(self.CHAIN, self.D09_TEXT, 0.1, 5)
        assert [(i.sentence, i.triplet) for i in got.items] == [
            (sentence, triplet) for sentence, triplet, _ in want
        ]
        assert [i.similarity for i in got.items] == pytest.approx(
            [sim for _, _, sim in want], abs=1e-12
        )

    def test_floor_is_inclusive(self, embedder):
        sim = oracles.text_cosine("immigrant caravans bring crime", self.D09_TEXT)
        knowledge = rank_filter({("immigrant caravans", "bring", "crime")},
                                self.D09_TEXT, embedder, floor=sim)
        assert len(knowledge.items) == 1

    def test_top_k_truncates(self, embedder):
        knowledge = rank_filter(self.CHAIN, self.D09_TEXT, embedder, floor=0.0, top_k=1)
        assert knowledge.sentences == ("immigrants are called vermin",)

    def test_exact_tie_order_is_deterministic(self, embedder):
        # Distinct triplets formatting to the same sentence score identically;
        # the stable sort then keeps them in sorted-candidate order.
        candidates = {("a b", "c", "d"), ("a", "b c", "d")}
        knowledge = rank_filter(candidates, "a b c d", embedder, floor=0.0)
        assert knowledge.sentences == ("a b c d", "a b c d")
        assert knowledge.items[0].similarity == knowledge.items[1].similarity
        assert [i.triplet for i in knowledge.items] == [("a", "b c", "d"), ("a b", "c", "d")]

    def test_bad_top_k(self, embedder):
        with pytest.raises(ValueError):
            rank_filter(set(), "text", embedder, top_k=0)

    def test_empty_candidates(self, embedder):
        assert rank_filter(set(), "text", embedder).items == ()


class TestQueryGraph:
    def run(self, sample_id, toy_graph, gateway, embedder, test_samples, **cfg):
        text = by_id(test_samples, sample_id).text
        return query_graph(text, toy_graph, gateway, embedder, QueryConfig(**cfg))

    @pytest.mark.parametrize("sample_id,sentence,similarity", [
        ("d01", "immigrants are called vermin", 0.6628489804),
        ("d02", "jews are accused of controlling the media", 0.4742206898),
        ("d04", "women belong in the kitchen", 0.4490502094),
        ("d08", "women belong in the kitchen", 0.7513913622),
        ("d11", "LGBT people are blamed for destroying families", 0.8277650283),
    ])
    def test_single_item_queries(self, toy_graph, detect_gateway_mock, embedder,
                                 test_samples, sample_id, sentence, similarity):
        knowledge = self.run(sample_id, toy_graph, detect_gateway_mock, embedder,
                             test_samples)
        assert len(knowledge.items) == 1
        assert knowledge.items[0].sentence == sentence
        assert knowledge.items[0].similarity == pytest.approx(similarity, abs=1e-10)

    def test_multi_hop_with_floor_drop(self, toy_graph, detect_gateway_mock, embedder,
                                       test_samples):
        knowledge = self.run("d09", toy_graph, detect_gateway_mock, embedder, test_samples)
        assert knowledge.sentences == (
            "immigrants are called vermin", "immigrant caravans bring crime",
        )

    @pytest.mark.parametrize("sample_id,reason", [
        ("d03", "no entities extracted"),
        ("d06", "all matches below map floor"),
        ("d07", "all matches below map floor"),
        ("d05", "single mapped node"),
        ("d10", "single mapped node"),
        ("d12", "single mapped node"),
    ])
    def test_short_circuits_to_empty(self, toy_graph, detect_gateway_mock, embedder,
                                     test_samples, sample_id, reason):
        knowledge = self.run(sample_id, toy_graph, detect_gateway_mock, embedder,
                             test_samples)
        assert not knowledge
        assert knowledge.items == ()

    def test_empty_graph_short_circuits(self, detect_gateway_mock, embedder, test_samples):
        text = by_id(test_samples, "d01").text
        knowledge = query_graph(text, KnowledgeGraph(), detect_gateway_mock, embedder)
        assert not knowledge

    def test_one_hop_widens_d01(self, toy_graph, detect_gateway_mock, embedder,
                                test_samples):
        default = self.run("d01", toy_graph, detect_gateway_mock, embedder, test_samples)
        one_hop = self.run("d01", toy_graph, detect_gateway_mock, embedder, test_samples,
                           strategy=PathStrategy.ONE_HOP)
        assert one_hop != default
        assert one_hop.sentences == (
            "immigrants are called vermin", "immigrants are linked to crime",
        )
        assert one_hop.items[1].similarity == pytest.approx(0.4582892861, abs=1e-10)

    def test_rank_filter_off_keeps_everything_sentence_sorted(
            self, toy_graph, detect_gateway_mock, embedder, test_samples):
        default = self.run("d09", toy_graph, detect_gateway_mock, embedder, test_samples)
        unfiltered = self.run("d09", toy_graph, detect_gateway_mock, embedder,
                              test_samples, rank_filter=False)
        assert unfiltered != default
        assert unfiltered.sentences == (
            "immigrant caravans bring crime",
            "immigrants are called vermin",
            "immigrants are linked to crime",
        )
        below_floor = unfiltered.items[2]
        assert below_floor.similarity == pytest.approx(0.2185393190, abs=1e-10)
        assert below_floor.similarity < QueryConfig().rank_floor

    def test_top_k_applies_end_to_end(self, toy_graph, detect_gateway_mock, embedder,
                                      test_samples):
        knowledge = self.run("d09", toy_graph, detect_gateway_mock, embedder,
                             test_samples, top_k=1)
        assert knowledge.sentences == ("immigrants are called vermin",)


class TestRetrievedKnowledgeSerialization:
    def test_round_trip(self):
        knowledge = RetrievedKnowledge((
            KnowledgeItem("a b c", ("a", "b", "c"), 0.5),
            KnowledgeItem("free text", None, 0.25),
        ))
        again = RetrievedKnowledge.from_json_dict(knowledge.to_json_dict())
        assert again == knowledge

    def test_similarity_rounded_to_ten_places(self):
        item = KnowledgeItem("s", ("a", "b", "c"), 0.123456789012345)
        assert item.to_json_dict()["similarity"] == 0.1234567890

    def test_null_triplet_serialized(self):
        payload = KnowledgeItem("s", None, 0.5).to_json_dict()
        assert payload["triplet"] is None
