#pragma once
// Prompt template bodies. Byte-identical copies live in templates/*.txt;
// tests/llm_test.cpp checks that the two agree.

#include <string_view>

namespace shml::prompts {

inline constexpr std::string_view k_generic_diagnosis = R"tpl(        Given the following information:
        - Data before the shift: {x_before.describe()}
        - Data after the shift: {x_after.describe()}
        - Context: {context}
        - Model performance across each covariate before the shift: {covariate_performance_before}
        - Model performance across each covariate after the shift: {covariate_performance_after}

        You know for a fact that the model has degraded. Analyze the covariates and think why.
        
        Review each existing covariate and provide a hypothesis on whether it might have changed and resulted in the model underperforming. Provide evidence for each hypothesis and the strength of belief for each covariate.

        Format your output as follows:
        Covariate: <covariate>; Hypothesis: ...; Evidence: ...; Strength of belief: ...

        After reviewing all the covariates, assign a confidence score for each covariate indicating your confidence level that the covariate has issues. Use the following confidence levels: extremely confident, confident, somewhat confident, unsure, completely unsure. Only use 'extremely confident' if you have overwhelming evidence for your decision. Prioritize making more confident beliefs. Avoid being uncertain. Use the available inputs as well as the data to make the best possible decision. Your goal is to be correct while reducing entropy of the probabilities (be confidently correct).
)tpl";

inline constexpr std::string_view k_covariate_combinations = R"tpl(        Given the following information:
        - Data before the shift: {x_before.describe()}
        - Data after the shift: {x_after.describe()}
        - Context: {context}
        - Model performance across each covariate before the shift: {covariate_performance_before}
        - Model performance across each covariate after the shift: {covariate_performance_after}

        You know for a fact that the model has degraded. Analyze the covariates and think why.
        
        Then, hypothesize {n} possible covariates or combinations of covariates that might have changed and resulted in the model underperforming. Each possibility should be mutually exclusive. For example, [X1] is one possibility, [X2] is another, and [X1, X2] is a third.
)tpl";

inline constexpr std::string_view k_diagnosis_probability = R"tpl(        Given the following information:
        - Data before the shift: {x_before.describe()}
        - Data after the shift: {x_after.describe()}
        - Context: {context}
        - Initial hypotheses on covariates or combinations of covariates that might have changed and resulted in model underperformance: {covariate_guesses}

        Summarize the provided hypotheses and assign probabilities to each hypothesis such that the total probability sums to 100

        Your probabilities should be reflective of the evidence and data. Uniform probabilities (10

        Format each hypothesis and its probability as follows:
        Hypothesis: [<covariate1>, <covariate2>, ...]; Probability: <probability>
)tpl";

inline constexpr std::string_view k_generic_adaptation = R"tpl(
       Suppose the following hypothesized issues in the dataset: {issues}
        Data before the shift: {x_before.describe()}
        Data after the shift: {x_after.describe()}

        Suggest {self.n} possible reasons why the model might have failed on the basis of the issues presented. These reasons should be hypotheses that might have resulted in the degradation of the model if such hypotheses turn out to be true. These hypotheses also have to be likely on the basis of the issues provided. These hypotheses should be specific to the data itself. The goal is to track down specific changes within the data that could have resulted in the model degradation.

        Format your output as follows:

        Hypothesis: <>; Evidence: <>
        
)tpl";

inline constexpr std::string_view k_subgroup_removal = R"tpl(        Suppose the following issues in the dataset: {issues}
        Data before the shift: {x_before.describe()}
        Data after the shift: {x_after.describe()}

        Suggest {self.n} possible subgroups that if removed could result in better performance for the model.
        The subgroups can be single (e.g. X > x) but could also be multiple combinations (e.g. X > x and Y < y)
)tpl";

inline constexpr std::string_view k_subgroup_retrain = R"tpl(        Suppose the following issues in the dataset: {issues}
        Data before the shift: {x_before.describe()}
        Data after the shift: {x_after.describe()}

        Suggest {self.n} possible subgroups that might need re-training. That is, fitting a separate model on these subgroups might result in superior performance. 
        The subgroups can be single (e.g. X > x) but could also be multiple combinations (e.g. X > x and Y < y)
)tpl";

}  // namespace shml::prompts
